#include "milsurv/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "milsurv/errors.hpp"
#include "milsurv/rng.hpp"

namespace milsurv::model {

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::Clinical: return "clinical";
    case Modality::Image: return "image";
    case Modality::Multimodal: return "multimodal";
  }
  return "?";
}

Modality modality_from_string(std::string_view s) {
  if (s == "clinical") return Modality::Clinical;
  if (s == "image") return Modality::Image;
  if (s == "multimodal") return Modality::Multimodal;
  throw ValidationError("unknown modality '" + std::string(s) + "'");
}

bool needs_image(Modality m) { return m != Modality::Clinical; }
bool needs_clinical(Modality m) { return m != Modality::Image; }

void Architecture::validate() const {
  if (needs_image(modality) && input_dim < 1) throw ContractError("architecture: input_dim must be >= 1");
  if (attention_dim < 1 || head_hidden < 1 || fusion_hidden < 1)
    throw ContractError("architecture: hidden widths must be >= 1");
}

TileMatrix to_tile_matrix(const tiling::EmbeddingBag& bag) {
  if (bag.empty()) throw PreconditionError("empty bag for patient '" + bag.patient_id() + "'");
  const std::size_t n = bag.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ta = bag.tile(a), tb = bag.tile(b);
    return std::lexicographical_compare(ta.begin(), ta.end(), tb.begin(), tb.end());
  });
  TileMatrix m(static_cast<Eigen::Index>(n), bag.dim());
  for (std::size_t r = 0; r < n; ++r) {
    const auto t = bag.tile(order[r]);
    for (int c = 0; c < bag.dim(); ++c) m(static_cast<Eigen::Index>(r), c) = t[static_cast<std::size_t>(c)];
  }
  return m;
}

// ---- parameter slots -----------------------------------------------------------

namespace {

enum Slot : std::size_t {
  AttV, AttW,
  HeadW1, HeadB1, HeadW2, HeadB2,
  ClinW1, ClinB1, ClinW2, ClinB2, ClinOutW, ClinOutB,
  FusW1, FusB1, FusW2, FusB2,
  kSlotCount
};

constexpr std::array<const char*, kSlotCount> kSlotNames{
    "attention.V", "attention.w",
    "head.W1",     "head.b1",     "head.w2",     "head.b2",
    "clinical.W1", "clinical.b1", "clinical.W2", "clinical.b2", "clinical_out.w", "clinical_out.b",
    "fusion.W1",   "fusion.b1",   "fusion.w2",   "fusion.b2"};

constexpr std::size_t kAbsent = static_cast<std::size_t>(-1);

std::vector<Slot> slots_for(Modality m) {
  switch (m) {
    case Modality::Image: return {AttV, AttW, HeadW1, HeadB1, HeadW2, HeadB2};
    case Modality::Clinical: return {ClinW1, ClinB1, ClinW2, ClinB2, ClinOutW, ClinOutB};
    case Modality::Multimodal: return {AttV, AttW, ClinW1, ClinB1, ClinW2, ClinB2, FusW1, FusB1, FusW2, FusB2};
  }
  return {};
}

std::pair<int, int> shape_of(Slot s, const Architecture& a) {
  constexpr int c0 = Architecture::kClinicalInputs, c1 = Architecture::kClinicalHidden,
                c2 = Architecture::kClinicalEmbedding;
  switch (s) {
    case AttV: return {a.attention_dim, a.input_dim};
    case AttW: return {a.attention_dim, 1};
    case HeadW1: return {a.head_hidden, a.input_dim};
    case HeadB1: return {a.head_hidden, 1};
    case HeadW2: return {1, a.head_hidden};
    case HeadB2: return {1, 1};
    case ClinW1: return {c1, c0};
    case ClinB1: return {c1, 1};
    case ClinW2: return {c2, c1};
    case ClinB2: return {c2, 1};
    case ClinOutW: return {1, c2};
    case ClinOutB: return {1, 1};
    case FusW1: return {a.fusion_hidden, a.input_dim + c2};
    case FusB1: return {a.fusion_hidden, 1};
    case FusW2: return {1, a.fusion_hidden};
    case FusB2: return {1, 1};
    default: return {0, 0};
  }
}

// Fan-in used for initialization: the input width of the layer a tensor belongs to.
int fan_in(Slot s, const Architecture& a) {
  switch (s) {
    case AttV: case HeadW1: case HeadB1: return a.input_dim;
    case AttW: return a.attention_dim;
    case HeadW2: case HeadB2: return a.head_hidden;
    case ClinW1: case ClinB1: return Architecture::kClinicalInputs;
    case ClinW2: case ClinB2: return Architecture::kClinicalHidden;
    case ClinOutW: case ClinOutB: return Architecture::kClinicalEmbedding;
    case FusW1: case FusB1: return a.input_dim + Architecture::kClinicalEmbedding;
    case FusW2: case FusB2: return a.fusion_hidden;
    default: return 1;
  }
}

Eigen::VectorXd relu(const Eigen::VectorXd& u) { return u.cwiseMax(0.0); }

Eigen::VectorXd relu_mask(const Eigen::VectorXd& u, const Eigen::VectorXd& grad) {
  return (u.array() > 0.0).select(grad, 0.0);
}

}  // namespace

RiskModel::RiskModel(Architecture arch, ParameterSet params, std::optional<cohort::NormalizationStats> norm)
    : arch_(arch), params_(std::move(params)), norm_(std::move(norm)) {
  arch_.validate();
  bind_slots();
  if (norm_) norm_->validate();
}

void RiskModel::bind_slots() {
  slot_.assign(kSlotCount, kAbsent);
  const auto wanted = slots_for(arch_.modality);
  if (params_.size() != wanted.size())
    throw ContractError("parameter set has " + std::to_string(params_.size()) + " tensors, modality " +
                        std::string(to_string(arch_.modality)) + " needs " + std::to_string(wanted.size()));
  for (auto s : wanted) {
    const auto i = params_.index_of(kSlotNames[s]);
    const auto [r, c] = shape_of(s, arch_);
    if (params_[i].rows() != r || params_[i].cols() != c)
      throw ContractError(std::string("parameter ") + kSlotNames[s] + " has shape " + std::to_string(params_[i].rows()) +
                          "x" + std::to_string(params_[i].cols()) + ", expected " + std::to_string(r) + "x" +
                          std::to_string(c));
    slot_[s] = i;
  }
}

RiskModel RiskModel::initialize(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  ParameterSet ps;
  for (auto s : slots_for(arch.modality)) {
    const auto [r, c] = shape_of(s, arch);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in(s, arch)));
    std::uniform_real_distribution<double> u(-bound, bound);
    Eigen::MatrixXd m(r, c);
    // Column-major fill order is part of the reproducibility contract.
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = u(rng);
    ps.add(kSlotNames[s], std::move(m));
  }
  return RiskModel(arch, std::move(ps));
}

void RiskModel::check_input(const ModelInput& in) const {
  if (needs_image(arch_.modality)) {
    if (!in.tiles) throw ContractError(std::string(to_string(arch_.modality)) + " model needs a tile bag");
    if (in.tiles->rows() < 1) throw PreconditionError("empty bag");
    if (in.tiles->cols() != arch_.input_dim)
      throw ContractError("bag dim " + std::to_string(in.tiles->cols()) + " does not match model input_dim " +
                          std::to_string(arch_.input_dim));
  }
  if (needs_clinical(arch_.modality) && !in.clinical)
    throw ContractError(std::string(to_string(arch_.modality)) + " model needs clinical features");
}

AttentionResult RiskModel::attention_pool(const TileMatrix& tiles) const {
  if (!needs_image(arch_.modality)) throw ContractError("clinical-only model has no attention block");
  if (tiles.rows() < 1) throw PreconditionError("attention_pool: empty bag");
  const auto& V = params_[slot_[AttV]];
  const Eigen::VectorXd w = params_[slot_[AttW]].col(0);
  const Eigen::MatrixXd Z = (tiles * V.transpose()).array().tanh().matrix();
  const Eigen::VectorXd e = Z * w;
  const Eigen::VectorXd ex = (e.array() - e.maxCoeff()).exp().matrix();
  AttentionResult r;
  r.weights = ex / ex.sum();
  r.pooled = tiles.transpose() * r.weights;
  return r;
}

double RiskModel::predict(const ModelInput& in) const {
  check_input(in);
  const auto head = [&](const Eigen::VectorXd& x, Slot W1, Slot b1, Slot w2, Slot b2) {
    const Eigen::VectorXd r = relu(params_[slot_[W1]] * x + params_[slot_[b1]].col(0));
    return (params_[slot_[w2]] * r)(0, 0) + params_[slot_[b2]](0, 0);
  };
  const auto encode_clinical = [&]() {
    const Eigen::Vector3d x(in.clinical->data());
    const Eigen::VectorXd h1 = relu(params_[slot_[ClinW1]] * x + params_[slot_[ClinB1]].col(0));
    return Eigen::VectorXd(relu(params_[slot_[ClinW2]] * h1 + params_[slot_[ClinB2]].col(0)));
  };

  switch (arch_.modality) {
    case Modality::Image: return head(attention_pool(*in.tiles).pooled, HeadW1, HeadB1, HeadW2, HeadB2);
    case Modality::Clinical: {
      const auto g = encode_clinical();
      return (params_[slot_[ClinOutW]] * g)(0, 0) + params_[slot_[ClinOutB]](0, 0);
    }
    case Modality::Multimodal: {
      const auto pooled = attention_pool(*in.tiles).pooled;
      const auto g = encode_clinical();
      Eigen::VectorXd z(pooled.size() + g.size());
      z << pooled, g;
      return head(z, FusW1, FusB1, FusW2, FusB2);
    }
  }
  return 0.0;
}

double RiskModel::accumulate_gradient(const ModelInput& in, double ds, ParameterSet& grad) const {
  check_input(in);
  if (!grad.same_layout(params_)) throw ContractError("gradient buffer layout differs from model parameters");
  const auto P = [&](Slot s) -> const Eigen::MatrixXd& { return params_[slot_[s]]; };
  const auto G = [&](Slot s) -> Eigen::MatrixXd& { return grad[slot_[s]]; };

  // Two-layer head x -> relu(W1 x + b1) -> w2 . r + b2. Returns score and,
  // when backpropagating, the input gradient.
  const auto head = [&](const Eigen::VectorXd& x, Slot W1, Slot b1, Slot w2, Slot b2, Eigen::VectorXd& dx) {
    const Eigen::VectorXd u = P(W1) * x + P(b1).col(0);
    const Eigen::VectorXd r = relu(u);
    const double s = (P(w2) * r)(0, 0) + P(b2)(0, 0);
    G(w2).noalias() += ds * r.transpose();
    G(b2)(0, 0) += ds;
    const Eigen::VectorXd du = relu_mask(u, ds * P(w2).row(0).transpose());
    G(W1).noalias() += du * x.transpose();
    G(b1).col(0) += du;
    dx = P(W1).transpose() * du;
    return s;
  };

  struct Clinical {
    Eigen::Vector3d x;
    Eigen::VectorXd q1, h1, q2, g;
  };
  const auto clinical_forward = [&]() {
    Clinical c;
    c.x = Eigen::Vector3d(in.clinical->data());
    c.q1 = P(ClinW1) * c.x + P(ClinB1).col(0);
    c.h1 = relu(c.q1);
    c.q2 = P(ClinW2) * c.h1 + P(ClinB2).col(0);
    c.g = relu(c.q2);
    return c;
  };
  const auto clinical_backward = [&](const Clinical& c, const Eigen::VectorXd& dg) {
    const Eigen::VectorXd dq2 = relu_mask(c.q2, dg);
    G(ClinW2).noalias() += dq2 * c.h1.transpose();
    G(ClinB2).col(0) += dq2;
    const Eigen::VectorXd dq1 = relu_mask(c.q1, P(ClinW2).transpose() * dq2);
    G(ClinW1).noalias() += dq1 * c.x.transpose();
    G(ClinB1).col(0) += dq1;
  };

  struct Attention {
    Eigen::MatrixXd Z;
    Eigen::VectorXd alpha, pooled;
  };
  const auto attention_forward = [&](const TileMatrix& H) {
    Attention a;
    a.Z = (H * P(AttV).transpose()).array().tanh().matrix();
    const Eigen::VectorXd e = a.Z * P(AttW).col(0);
    const Eigen::VectorXd ex = (e.array() - e.maxCoeff()).exp().matrix();
    a.alpha = ex / ex.sum();
    a.pooled = H.transpose() * a.alpha;
    return a;
  };
  const auto attention_backward = [&](const TileMatrix& H, const Attention& a, const Eigen::VectorXd& dpooled) {
    const Eigen::VectorXd dalpha = H * dpooled;
    const Eigen::VectorXd de = a.alpha.cwiseProduct((dalpha.array() - a.alpha.dot(dalpha)).matrix());
    G(AttW).col(0).noalias() += a.Z.transpose() * de;
    const Eigen::MatrixXd dA =
        ((de * P(AttW).col(0).transpose()).array() * (1.0 - a.Z.array().square())).matrix();
    G(AttV).noalias() += dA.transpose() * H;
  };

  Eigen::VectorXd dx;
  switch (arch_.modality) {
    case Modality::Image: {
      const auto a = attention_forward(*in.tiles);
      const double s = head(a.pooled, HeadW1, HeadB1, HeadW2, HeadB2, dx);
      attention_backward(*in.tiles, a, dx);
      return s;
    }
    case Modality::Clinical: {
      const auto c = clinical_forward();
      const double s = (P(ClinOutW) * c.g)(0, 0) + P(ClinOutB)(0, 0);
      G(ClinOutW).noalias() += ds * c.g.transpose();
      G(ClinOutB)(0, 0) += ds;
      clinical_backward(c, ds * P(ClinOutW).row(0).transpose());
      return s;
    }
    case Modality::Multimodal: {
      const auto a = attention_forward(*in.tiles);
      const auto c = clinical_forward();
      Eigen::VectorXd z(a.pooled.size() + c.g.size());
      z << a.pooled, c.g;
      const double s = head(z, FusW1, FusB1, FusW2, FusB2, dx);
      attention_backward(*in.tiles, a, dx.head(a.pooled.size()));
      clinical_backward(c, dx.tail(c.g.size()));
      return s;
    }
  }
  return 0.0;
}

// ---- free functions ---------------------------------------------------------------

AttentionResult attention_pool(const tiling::EmbeddingBag& bag, const RiskModel& model) {
  if (bag.empty()) throw PreconditionError("attention_pool: empty bag");
  // Weights are reported in the bag's own tile order.
  const std::size_t n = bag.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ta = bag.tile(a), tb = bag.tile(b);
    return std::lexicographical_compare(ta.begin(), ta.end(), tb.begin(), tb.end());
  });
  auto r = model.attention_pool(to_tile_matrix(bag));
  Eigen::VectorXd w(static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k) w(static_cast<Eigen::Index>(order[k])) = r.weights(static_cast<Eigen::Index>(k));
  r.weights = std::move(w);
  return r;
}

double predict(const RiskModel& model, const tiling::EmbeddingBag* bag, const cohort::Standardized* clinical) {
  std::optional<TileMatrix> tiles;
  if (bag && needs_image(model.modality())) tiles = to_tile_matrix(*bag);
  return model.predict({tiles ? &*tiles : nullptr, clinical});
}

double predict_raw(const RiskModel& model, const TileMatrix* tiles, const cohort::ClinicalFeatures* clinical) {
  std::optional<cohort::Standardized> z;
  if (needs_clinical(model.modality())) {
    if (!clinical) throw ContractError(std::string(to_string(model.modality())) + " model needs clinical features");
    if (!model.normalization()) throw ContractError("model carries no normalization statistics");
    z = cohort::normalize_clinical(*clinical, *model.normalization());
  }
  return model.predict({tiles, z ? &*z : nullptr});
}

namespace {

void check_members(const std::vector<RiskModel>& models) {
  if (models.empty()) throw PreconditionError("ensemble_predict: no models");
  for (const auto& m : models)
    if (m.modality() != models.front().modality()) throw ContractError("ensemble_predict: members differ in modality");
}

}  // namespace

double ensemble_predict(const std::vector<RiskModel>& models, const ModelInput& in) {
  check_members(models);
  double sum = 0.0;
  for (const auto& m : models) sum += m.predict(in);
  return sum / static_cast<double>(models.size());
}

double ensemble_predict(const std::vector<RiskModel>& models, const TileMatrix* tiles,
                        const cohort::ClinicalFeatures* clinical) {
  check_members(models);
  double sum = 0.0;
  for (const auto& m : models) sum += predict_raw(m, tiles, clinical);
  return sum / static_cast<double>(models.size());
}

}  // namespace milsurv::model
