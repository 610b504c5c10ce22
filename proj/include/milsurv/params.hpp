#pragma once

#include <Eigen/Dense>
#include <string>
#include <string_view>
#include <vector>

namespace milsurv::model {

struct Parameter {
  std::string name;
  Eigen::MatrixXd value;
};

// Ordered collection of named dense tensors. Gradients and optimizer moments
// are ParameterSets of the same layout.
class ParameterSet {
 public:
  std::size_t add(std::string name, Eigen::MatrixXd value);

  std::size_t size() const noexcept { return items_.size(); }
  std::size_t numel() const noexcept;
  // Throws ContractError when the name is unknown.
  std::size_t index_of(std::string_view name) const;

  Eigen::MatrixXd& operator[](std::size_t i) { return items_[i].value; }
  const Eigen::MatrixXd& operator[](std::size_t i) const { return items_[i].value; }
  const std::string& name(std::size_t i) const { return items_[i].name; }

  const std::vector<Parameter>& items() const noexcept { return items_; }

  ParameterSet zeros_like() const;
  void set_zero();
  bool same_layout(const ParameterSet& other) const;
  // Name of the first tensor holding a NaN/Inf, or empty.
  std::string first_non_finite() const;

  // Flat coordinate access (tensor order, column-major within a tensor).
  double& flat(std::size_t k);
  double flat(std::size_t k) const;
  // "tensor[row,col]" for a flat coordinate.
  std::string describe(std::size_t k) const;

  friend bool operator==(const ParameterSet& a, const ParameterSet& b);

 private:
  std::pair<std::size_t, std::size_t> locate(std::size_t k) const;
  std::vector<Parameter> items_;
};

}  // namespace milsurv::model
