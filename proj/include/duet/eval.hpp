#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "duet/common.hpp"
#include "duet/corpus.hpp"
#include "duet/io.hpp"
#include "duet/miner.hpp"
#include "duet/trainer.hpp"

namespace duet {

// --- accuracy / macro precision / recall / F1 ---------------------------------

struct ClassMetrics {
  int label = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;  // gold occurrences
};

struct TaskReport {
  double acc = 0.0;
  double mp = 0.0;
  double mr = 0.0;
  double f1 = 0.0;
  std::vector<ClassMetrics> per_class;
  std::size_t total = 0;
};

// Per-class precision TP/(TP+FP) and recall TP/(TP+FN), each 0 when
// undefined; macro averages run over classes present in gold unless
// include_absent_classes widens them to the whole label range.
inline TaskReport macro_metrics(std::span<const int> gold, std::span<const int> pred,
                                int num_classes,
                                bool include_absent_classes = false) {
  if (gold.size() != pred.size())
    throw ValidationError("gold and prediction lists differ in length");
  if (gold.empty()) throw ValidationError("no examples to score");
  if (num_classes < 1) throw ValidationError("num_classes must be >= 1");

  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] < 0 || gold[i] >= num_classes || pred[i] < 0 ||
        pred[i] >= num_classes)
      throw ValidationError("label out of range at example " + std::to_string(i));
    if (gold[i] == pred[i]) {
      ++correct;
      ++tp[static_cast<std::size_t>(gold[i])];
    } else {
      ++fn[static_cast<std::size_t>(gold[i])];
      ++fp[static_cast<std::size_t>(pred[i])];
    }
  }

  TaskReport report;
  report.total = gold.size();
  report.acc = static_cast<double>(correct) / static_cast<double>(gold.size());
  for (int c = 0; c < num_classes; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    const std::size_t support = tp[ci] + fn[ci];
    if (support == 0 && !include_absent_classes) continue;
    ClassMetrics m;
    m.label = c;
    m.support = support;
    const std::size_t predicted = tp[ci] + fp[ci];
    m.precision = predicted ? static_cast<double>(tp[ci]) / static_cast<double>(predicted) : 0.0;
    m.recall = support ? static_cast<double>(tp[ci]) / static_cast<double>(support) : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    report.per_class.push_back(m);
  }
  if (report.per_class.empty())
    throw ValidationError("no classes to average over");
  for (const auto& m : report.per_class) {
    report.mp += m.precision;
    report.mr += m.recall;
    report.f1 += m.f1;
  }
  const auto k = static_cast<double>(report.per_class.size());
  report.mp /= k;
  report.mr /= k;
  report.f1 /= k;
  return report;
}

// Report labels are positions by default; relabel maps them back to catalog ids.
inline void relabel_report(TaskReport& report, std::span<const int> label_ids) {
  for (auto& m : report.per_class) m.label = label_ids[static_cast<std::size_t>(m.label)];
}

inline nlohmann::json report_to_json(const std::string& task,
                                     const TaskReport& report) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& m : report.per_class)
    per_class.push_back({{"label", m.label},
                         {"precision", m.precision},
                         {"recall", m.recall},
                         {"f1", m.f1},
                         {"support", m.support}});
  return {{"task", task},     {"acc", report.acc}, {"mp", report.mp},
          {"mr", report.mr},  {"f1", report.f1},   {"total", report.total},
          {"per_class", per_class}};
}

// --- per-example prediction cross-entropy ---------------------------------------

struct EntropyReport {
  std::vector<double> values;  // e_i = -ln P(gold_i)
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::vector<double> quantiles;  // p25, p50, p75
  std::vector<std::size_t> histogram;
  double bin_width = 0.0;
};

inline EntropyReport entropy_report(std::span<const double> gold_probs,
                                    int bins = 50) {
  if (gold_probs.empty()) throw ValidationError("no examples to score");
  if (bins < 1) throw ValidationError("bins must be >= 1");
  EntropyReport report;
  report.values.reserve(gold_probs.size());
  for (double p : gold_probs) {
    if (p < 0.0 || p > 1.0 + 1e-12)
      throw ValidationError("probability outside [0, 1]");
    report.values.push_back(-std::log(std::max(p, 1e-300)));
  }
  report.mean = 0.0;
  for (double e : report.values) report.mean += e;
  report.mean /= static_cast<double>(report.values.size());

  std::vector<double> sorted = report.values;
  std::sort(sorted.begin(), sorted.end());
  report.min = sorted.front();
  report.max = sorted.back();
  for (double q : {0.25, 0.50, 0.75}) {
    const auto rank = static_cast<std::size_t>(
        std::ceil(q * static_cast<double>(sorted.size())));
    report.quantiles.push_back(sorted[rank == 0 ? 0 : rank - 1]);
  }

  report.histogram.assign(static_cast<std::size_t>(bins), 0);
  report.bin_width = report.max > 0.0 ? report.max / bins : 1.0;
  for (double e : report.values) {
    auto bin = static_cast<std::size_t>(e / report.bin_width);
    bin = std::min(bin, static_cast<std::size_t>(bins - 1));
    ++report.histogram[bin];
  }
  return report;
}

// Probability assigned to each case's gold label under one task head.
inline std::vector<double> gold_probabilities(const EncoderModel& model,
                                              const ClassifierHead& head,
                                              std::span<const LegalCase> cases,
                                              const Vocabulary& vocab,
                                              int workers = 1) {
  std::vector<double> probs(cases.size());
  parallel_for(cases.size(), workers, [&](std::size_t i) {
    const auto h = encode(model, tokenize(cases[i].fact_text, vocab), Head::kFact);
    const auto p = softmax(head_logits(head, h));
    const int gold = head.dense_index(gold_label(cases[i], head.task));
    probs[i] = p[static_cast<std::size_t>(gold)];
  });
  return probs;
}

// --- Davies-Bouldin index --------------------------------------------------------

struct DbiEntry {
  int charge_id = 0;
  double dbi = 0.0;
  double s = 0.0;  // mean member distance to the centroid
  std::vector<double> centroid;
};

struct DbiReport {
  std::vector<DbiEntry> entries;          // one per selected charge, input order
  std::vector<std::vector<double>> m;     // centroid distances, entry-indexed
};

// Cluster separability per charge: S_i = mean ||x - mu_i||,
// M_ij = ||mu_i - mu_j||, DBI_i = max_{j != i} (S_i + S_j) / M_ij.
inline DbiReport dbi(const io::Matrix& embeddings, std::span<const int> charge_labels,
                     std::span<const int> selected_charges) {
  if (charge_labels.size() != embeddings.rows)
    throw ValidationError("label list does not match embedding rows");
  if (selected_charges.size() < 2)
    throw ValidationError("need at least 2 charges to compare clusters");
  for (std::size_t i = 0; i < selected_charges.size(); ++i)
    for (std::size_t j = i + 1; j < selected_charges.size(); ++j)
      if (selected_charges[i] == selected_charges[j])
        throw ValidationError("duplicate charge in selection");

  const std::size_t dim = embeddings.dim;
  auto row = [&](std::size_t r) {
    return std::span<const float>(embeddings.data).subspan(r * dim, dim);
  };

  DbiReport report;
  for (int charge : selected_charges) {
    DbiEntry entry;
    entry.charge_id = charge;
    entry.centroid.assign(dim, 0.0);
    std::vector<std::size_t> members;
    for (std::size_t r = 0; r < embeddings.rows; ++r)
      if (charge_labels[r] == charge) members.push_back(r);
    if (members.empty())
      throw ValidationError("charge " + std::to_string(charge) +
                            " has no embedded cases");
    for (std::size_t r : members) {
      const auto x = row(r);
      for (std::size_t d = 0; d < dim; ++d) entry.centroid[d] += x[d];
    }
    for (auto& v : entry.centroid) v /= static_cast<double>(members.size());
    for (std::size_t r : members) {
      const auto x = row(r);
      double sq = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = x[d] - entry.centroid[d];
        sq += diff * diff;
      }
      entry.s += std::sqrt(sq);
    }
    entry.s /= static_cast<double>(members.size());
    report.entries.push_back(std::move(entry));
  }

  const std::size_t k = report.entries.size();
  report.m.assign(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      double sq = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = report.entries[i].centroid[d] - report.entries[j].centroid[d];
        sq += diff * diff;
      }
      const double dist = std::sqrt(sq);
      if (dist == 0.0)
        throw ValidationError("charges " + std::to_string(report.entries[i].charge_id) +
                              " and " + std::to_string(report.entries[j].charge_id) +
                              " have coincident centroids");
      report.m[i][j] = report.m[j][i] = dist;
    }

  for (std::size_t i = 0; i < k; ++i) {
    double worst = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (j == i) continue;
      worst = std::max(worst, (report.entries[i].s + report.entries[j].s) /
                                  report.m[i][j]);
    }
    report.entries[i].dbi = worst;
  }
  return report;
}

// Per-charge baseline-minus-candidate deltas; positive means the candidate
// clusters tighter.
inline std::vector<std::pair<int, double>> dbi_reduction(const DbiReport& baseline,
                                                         const DbiReport& candidate) {
  if (baseline.entries.size() != candidate.entries.size())
    throw ValidationError("reports cover different charge selections");
  std::vector<std::pair<int, double>> deltas;
  for (std::size_t i = 0; i < baseline.entries.size(); ++i) {
    if (baseline.entries[i].charge_id != candidate.entries[i].charge_id)
      throw ValidationError("reports cover different charge selections");
    deltas.emplace_back(baseline.entries[i].charge_id,
                        baseline.entries[i].dbi - candidate.entries[i].dbi);
  }
  return deltas;
}

inline nlohmann::json dbi_to_json(const DbiReport& report) {
  nlohmann::json charges = nlohmann::json::array();
  for (const auto& e : report.entries)
    charges.push_back({{"charge_id", e.charge_id}, {"dbi", e.dbi}, {"s", e.s}});
  return charges;
}

// --- embedding export -------------------------------------------------------------

inline void export_embeddings(const EncoderModel& model,
                              std::span<const LegalCase> cases,
                              const Vocabulary& vocab, const fs::path& matrix_path,
                              const fs::path& sidecar_path, int workers = 1) {
  write_index(embed_corpus(model, cases, vocab, workers), matrix_path, sidecar_path);
}

}  // namespace duet
