#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "duet/common.hpp"

namespace duet {

// One softmax-contrastive comparison: an anchor scored against its positive
// and a list of negatives. Views only; the caller owns the vectors.
struct ContrastiveInstance {
  std::span<const double> anchor;
  std::span<const double> positive;
  std::vector<std::span<const double>> negatives;
  double temperature = 0.05;

  void validate() const {
    if (temperature <= 0.0) throw ValidationError("temperature must be > 0");
    if (negatives.empty()) throw ValidationError("need at least one negative");
    if (anchor.size() != positive.size())
      throw ValidationError("embedding dimensions disagree");
    for (const auto& n : negatives)
      if (n.size() != anchor.size())
        throw ValidationError("embedding dimensions disagree");
  }
};

struct LossValue {
  double value = 0.0;
  std::vector<double> softmax_probs;  // index 0 = positive, then negatives
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("embedding dimensions disagree");
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0)
    throw ValidationError("cosine similarity of a zero-norm embedding");
  return dot(a, b) / (na * nb);
}

namespace detail {

// Temperature-scaled scores for [positive, negatives...].
inline std::vector<double> scaled_scores(const ContrastiveInstance& inst) {
  std::vector<double> z;
  z.reserve(inst.negatives.size() + 1);
  z.push_back(cosine_sim(inst.anchor, inst.positive) / inst.temperature);
  for (const auto& n : inst.negatives)
    z.push_back(cosine_sim(inst.anchor, n) / inst.temperature);
  return z;
}

inline std::vector<double> softmax_of(std::span<const double> z, double* lse_out) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - m);
  const double lse = m + std::log(sum);
  std::vector<double> p(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) p[k] = std::exp(z[k] - lse);
  if (lse_out) *lse_out = lse;
  return p;
}

}  // namespace detail

// -ln softmax(sim/tau) at the positive slot, via max-subtracted log-sum-exp.
inline LossValue info_nce(const ContrastiveInstance& inst) {
  inst.validate();
  const std::vector<double> z = detail::scaled_scores(inst);
  double lse = 0.0;
  LossValue out;
  out.softmax_probs = detail::softmax_of(z, &lse);
  out.value = lse - z[0];
  return out;
}

struct InstanceGradients {
  std::vector<double> anchor;
  std::vector<double> positive;
  std::vector<std::vector<double>> negatives;
};

namespace detail {

// d cos(a,b)/da = b/(|a||b|) - cos(a,b) a/|a|^2, accumulated scaled by c.
inline void add_cosine_grad_wrt_a(std::span<const double> a,
                                  std::span<const double> b, double coeff,
                                  std::vector<double>& out) {
  const double na = norm(a), nb = norm(b);
  const double cos_ab = dot(a, b) / (na * nb);
  const double inv = 1.0 / (na * nb);
  const double self = cos_ab / (na * na);
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] += coeff * (b[i] * inv - a[i] * self);
}

}  // namespace detail

// Gradients of scale * info_nce(inst).value w.r.t. every embedding.
// dL/d sim_k = (p_k - [k == positive]) / tau, chained through the cosine.
inline InstanceGradients info_nce_backward(const ContrastiveInstance& inst,
                                           double scale = 1.0) {
  inst.validate();
  const std::vector<double> z = detail::scaled_scores(inst);
  const std::vector<double> p = detail::softmax_of(z, nullptr);

  const std::size_t dim = inst.anchor.size();
  InstanceGradients g;
  g.anchor.assign(dim, 0.0);
  g.positive.assign(dim, 0.0);
  g.negatives.assign(inst.negatives.size(), std::vector<double>(dim, 0.0));

  auto coeff = [&](std::size_t k) {
    return scale * (p[k] - (k == 0 ? 1.0 : 0.0)) / inst.temperature;
  };
  detail::add_cosine_grad_wrt_a(inst.anchor, inst.positive, coeff(0), g.anchor);
  detail::add_cosine_grad_wrt_a(inst.positive, inst.anchor, coeff(0), g.positive);
  for (std::size_t k = 0; k < inst.negatives.size(); ++k) {
    detail::add_cosine_grad_wrt_a(inst.anchor, inst.negatives[k], coeff(k + 1),
                                  g.anchor);
    detail::add_cosine_grad_wrt_a(inst.negatives[k], inst.anchor, coeff(k + 1),
                                  g.negatives[k]);
  }
  return g;
}

inline double combined_loss(const LossValue& lcc, const LossValue& ldm) {
  return lcc.value + ldm.value;
}

}  // namespace duet
