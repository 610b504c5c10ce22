#include "milsurv/params.hpp"

#include "milsurv/errors.hpp"

namespace milsurv::model {

std::size_t ParameterSet::add(std::string name, Eigen::MatrixXd value) {
  for (const auto& p : items_)
    if (p.name == name) throw ContractError("duplicate parameter name '" + name + "'");
  items_.push_back({std::move(name), std::move(value)});
  return items_.size() - 1;
}

std::size_t ParameterSet::numel() const noexcept {
  std::size_t n = 0;
  for (const auto& p : items_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

std::size_t ParameterSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < items_.size(); ++i)
    if (items_[i].name == name) return i;
  throw ContractError("no parameter named '" + std::string(name) + "'");
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet z;
  for (const auto& p : items_) z.items_.push_back({p.name, Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols())});
  return z;
}

void ParameterSet::set_zero() {
  for (auto& p : items_) p.value.setZero();
}

bool ParameterSet::same_layout(const ParameterSet& o) const {
  if (o.items_.size() != items_.size()) return false;
  for (std::size_t i = 0; i < items_.size(); ++i)
    if (items_[i].name != o.items_[i].name || items_[i].value.rows() != o.items_[i].value.rows() ||
        items_[i].value.cols() != o.items_[i].value.cols())
      return false;
  return true;
}

std::string ParameterSet::first_non_finite() const {
  for (const auto& p : items_)
    if (!p.value.allFinite()) return p.name;
  return {};
}

std::pair<std::size_t, std::size_t> ParameterSet::locate(std::size_t k) const {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto n = static_cast<std::size_t>(items_[i].value.size());
    if (k < n) return {i, k};
    k -= n;
  }
  throw ContractError("flat parameter index out of range");
}

double& ParameterSet::flat(std::size_t k) {
  auto [i, j] = locate(k);
  return items_[i].value.data()[j];
}

double ParameterSet::flat(std::size_t k) const {
  auto [i, j] = locate(k);
  return items_[i].value.data()[j];
}

std::string ParameterSet::describe(std::size_t k) const {
  auto [i, j] = locate(k);
  const auto rows = static_cast<std::size_t>(items_[i].value.rows());
  return items_[i].name + "[" + std::to_string(j % rows) + "," + std::to_string(j / rows) + "]";
}

bool operator==(const ParameterSet& a, const ParameterSet& b) {
  if (!a.same_layout(b)) return false;
  for (std::size_t i = 0; i < a.items_.size(); ++i)
    if (a.items_[i].value != b.items_[i].value) return false;
  return true;
}

}  // namespace milsurv::model
