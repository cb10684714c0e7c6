#pragma once

// Independent reference implementations used only for checking. Everything
// here is written directly from the definitions with plain loops, on purpose:
// no code is shared with the library under test.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace oracles {

// relative error with an absolute floor, the tolerance used everywhere
inline double rel_err(double analytic, double reference) {
  return std::fabs(analytic - reference) /
         std::max(1e-8, std::fabs(reference));
}

// --- central finite differences -------------------------------------------------

// d f / d v[i] for a double vector the closure reads in place.
inline std::vector<double> fd_vector(const std::function<double()>& f,
                                     std::vector<double>& v, double eps = 1e-6) {
  std::vector<double> grad(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double saved = v[i];
    v[i] = saved + eps;
    const double up = f();
    v[i] = saved - eps;
    const double down = f();
    v[i] = saved;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

// d f / d p[i] for float-stored parameters. Steps are measured after float
// rounding so quantization cannot bias the quotients, and two central
// differences at eps and eps/2 are combined to cancel the h^2 truncation
// term, which would otherwise swamp small gradient components.
inline std::vector<double> fd_float_block(const std::function<double()>& f,
                                          std::span<float> p, double eps = 1e-3) {
  auto central = [&](std::size_t i, double step, double* half_span) {
    const float saved = p[i];
    const auto plus = static_cast<float>(static_cast<double>(saved) + step);
    const auto minus = static_cast<float>(static_cast<double>(saved) - step);
    p[i] = plus;
    const double up = f();
    p[i] = minus;
    const double down = f();
    p[i] = saved;
    const double span = static_cast<double>(plus) - static_cast<double>(minus);
    *half_span = span / 2.0;
    return (up - down) / span;
  };
  std::vector<double> grad(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    double h1 = 0.0, h2 = 0.0;
    const double d1 = central(i, eps, &h1);
    const double d2 = central(i, eps / 2.0, &h2);
    const double denom = h1 * h1 - h2 * h2;
    grad[i] = std::fabs(denom) > 1e-12 * h1 * h1
                  ? (h1 * h1 * d2 - h2 * h2 * d1) / denom
                  : d2;
  }
  return grad;
}

// --- contrastive loss, direct formula -------------------------------------------

inline double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// -log(exp(s+/t) / (exp(s+/t) + sum exp(s-/t))) evaluated literally,
// without any log-sum-exp rearrangement.
inline double naive_info_nce(std::span<const double> anchor,
                             std::span<const double> positive,
                             const std::vector<std::vector<double>>& negatives,
                             double tau) {
  const double num = std::exp(cosine(anchor, positive) / tau);
  double den = num;
  for (const auto& n : negatives) den += std::exp(cosine(anchor, n) / tau);
  return -std::log(num / den);
}

// --- retrieval ranking ------------------------------------------------------------

// Full sort of every other row by cosine descending, id ascending.
inline std::vector<std::string> exhaustive_rank(
    const std::vector<std::vector<double>>& rows,
    const std::vector<std::string>& ids, std::size_t anchor) {
  std::vector<std::pair<double, std::string>> scored;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i == anchor) continue;
    scored.emplace_back(cosine(rows[anchor], rows[i]), ids[i]);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
    if (x.first != y.first) return x.first > y.first;
    return x.second < y.second;
  });
  std::vector<std::string> order;
  for (const auto& [s, id] : scored) order.push_back(id);
  return order;
}

// --- decision pair enumeration ------------------------------------------------------

inline std::set<std::pair<int, int>> enumerate_decision_pairs(
    std::pair<int, int> truth, const std::vector<int>& neg_articles,
    const std::vector<int>& neg_charges) {
  std::set<int> articles(neg_articles.begin(), neg_articles.end());
  articles.insert(truth.first);
  std::set<int> charges(neg_charges.begin(), neg_charges.end());
  charges.insert(truth.second);
  std::set<std::pair<int, int>> pairs;
  for (int a : articles)
    for (int c : charges)
      if (std::make_pair(a, c) != truth) pairs.insert({a, c});
  return pairs;
}

// --- classification metrics ----------------------------------------------------------

struct MacroResult {
  double acc = 0.0, mp = 0.0, mr = 0.0, f1 = 0.0;
};

// Builds the full confusion matrix, then averages per-class scores.
inline MacroResult confusion_macro(const std::vector<int>& gold,
                                   const std::vector<int>& pred, int num_classes,
                                   bool include_absent) {
  std::vector<std::vector<std::size_t>> confusion(
      num_classes, std::vector<std::size_t>(num_classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    confusion[gold[i]][pred[i]] += 1;
    if (gold[i] == pred[i]) ++correct;
  }
  MacroResult out;
  out.acc = static_cast<double>(correct) / static_cast<double>(gold.size());
  std::size_t counted = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::size_t tp = confusion[c][c], row = 0, col = 0;
    for (int j = 0; j < num_classes; ++j) {
      row += confusion[c][j];  // gold == c
      col += confusion[j][c];  // pred == c
    }
    if (row == 0 && !include_absent) continue;
    ++counted;
    const double p = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    const double r = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    out.mp += p;
    out.mr += r;
    out.f1 += (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  out.mp /= static_cast<double>(counted);
  out.mr /= static_cast<double>(counted);
  out.f1 /= static_cast<double>(counted);
  return out;
}

// --- cluster separability ------------------------------------------------------------

// Literal evaluation: S_i as mean distance to the centroid, M_ij as centroid
// distance, DBI_i = max over j of (S_i + S_j) / M_ij.
inline std::vector<double> direct_dbi(const std::vector<std::vector<double>>& points,
                                      const std::vector<int>& labels,
                                      const std::vector<int>& selected) {
  const std::size_t dim = points.front().size();
  std::vector<std::vector<double>> centroids;
  std::vector<double> s;
  for (int label : selected) {
    std::vector<double> mu(dim, 0.0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (labels[i] != label) continue;
      for (std::size_t d = 0; d < dim; ++d) mu[d] += points[i][d];
      ++count;
    }
    for (auto& v : mu) v /= static_cast<double>(count);
    double spread = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (labels[i] != label) continue;
      double sq = 0.0;
      for (std::size_t d = 0; d < dim; ++d)
        sq += (points[i][d] - mu[d]) * (points[i][d] - mu[d]);
      spread += std::sqrt(sq);
    }
    centroids.push_back(mu);
    s.push_back(spread / static_cast<double>(count));
  }
  std::vector<double> dbi(selected.size(), 0.0);
  for (std::size_t i = 0; i < selected.size(); ++i) {
    for (std::size_t j = 0; j < selected.size(); ++j) {
      if (i == j) continue;
      double sq = 0.0;
      for (std::size_t d = 0; d < dim; ++d)
        sq += (centroids[i][d] - centroids[j][d]) * (centroids[i][d] - centroids[j][d]);
      dbi[i] = std::max(dbi[i], (s[i] + s[j]) / std::sqrt(sq));
    }
  }
  return dbi;
}

}  // namespace oracles
