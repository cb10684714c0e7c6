#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "duet/common.hpp"
#include "duet/corpus.hpp"
#include "duet/encoder.hpp"
#include "duet/io.hpp"
#include "duet/pools.hpp"
#include "duet/trainer.hpp"

namespace duet {

// Case embeddings for brute-force dense retrieval. Rows are float32 so an
// index built in memory and one re-imported from disk rank identically.
struct CorpusIndex {
  std::vector<std::string> case_ids;
  std::vector<LabelPair> labels;
  io::Matrix matrix;

  std::size_t size() const { return case_ids.size(); }

  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(matrix.data).subspan(i * matrix.dim, matrix.dim);
  }

  std::size_t row_of(const std::string& case_id) const {
    for (std::size_t i = 0; i < case_ids.size(); ++i)
      if (case_ids[i] == case_id) return i;
    throw ValidationError("case not in index: " + case_id);
  }
};

inline CorpusIndex embed_corpus(const EncoderModel& model,
                                std::span<const LegalCase> cases,
                                const Vocabulary& vocab, int workers = 1) {
  CorpusIndex index;
  index.matrix.rows = static_cast<std::uint32_t>(cases.size());
  index.matrix.dim = static_cast<std::uint32_t>(model.config.proj_dim);
  index.matrix.data.resize(cases.size() *
                           static_cast<std::size_t>(model.config.proj_dim));
  index.case_ids.resize(cases.size());
  index.labels.resize(cases.size());
  parallel_for(cases.size(), workers, [&](std::size_t i) {
    index.case_ids[i] = cases[i].case_id;
    index.labels[i] = {cases[i].article_id, cases[i].charge_id};
    const auto h = encode(model, tokenize(cases[i].fact_text, vocab), Head::kFact);
    float* out = index.matrix.data.data() + i * static_cast<std::size_t>(model.config.proj_dim);
    for (std::size_t d = 0; d < h.size(); ++d) out[d] = static_cast<float>(h[d]);
  });
  return index;
}

// --- matrix + label-sidecar persistence -------------------------------------
// Sidecar CSV rows: case_id,article_id,charge_id (no header).

inline void write_index(const CorpusIndex& index, const fs::path& matrix_path,
                        const fs::path& sidecar_path) {
  io::write_matrix(matrix_path, index.matrix.rows, index.matrix.dim,
                   index.matrix.data);
  std::string csv;
  for (std::size_t i = 0; i < index.size(); ++i)
    csv += index.case_ids[i] + "," + std::to_string(index.labels[i].article_id) +
           "," + std::to_string(index.labels[i].charge_id) + "\n";
  io::write_file_atomic(sidecar_path, csv);
}

inline CorpusIndex read_index(const fs::path& matrix_path,
                              const fs::path& sidecar_path) {
  CorpusIndex index;
  index.matrix = io::read_matrix(matrix_path);
  const std::string csv = io::read_file(sidecar_path);
  std::size_t pos = 0;
  while (pos < csv.size()) {
    std::size_t eol = csv.find('\n', pos);
    if (eol == std::string::npos) eol = csv.size();
    const std::string line = csv.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;
    const std::size_t c1 = line.find(',');
    const std::size_t c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw ValidationError("malformed sidecar row: " + line);
    try {
      index.case_ids.push_back(line.substr(0, c1));
      index.labels.push_back({std::stoi(line.substr(c1 + 1, c2 - c1 - 1)),
                              std::stoi(line.substr(c2 + 1))});
    } catch (const std::exception&) {
      throw ValidationError("malformed sidecar row: " + line);
    }
  }
  if (index.case_ids.size() != index.matrix.rows)
    throw ValidationError("sidecar row count does not match embedding matrix");
  return index;
}

// --- retrieval ----------------------------------------------------------------

namespace detail {

// Rows ranked by cosine against the anchor row: similarity descending, ties
// by ascending case_id; the anchor itself is excluded.
inline std::vector<std::size_t> ranked_rows(const CorpusIndex& index,
                                            std::size_t anchor) {
  const auto a = index.row(anchor);
  double na = 0.0;
  for (float v : a) na += static_cast<double>(v) * v;
  na = std::sqrt(na);
  if (na == 0.0)
    throw ValidationError("zero-norm embedding for case " + index.case_ids[anchor]);

  std::vector<double> score(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (i == anchor) continue;
    const auto b = index.row(i);
    double dot = 0.0, nb = 0.0;
    for (std::size_t d = 0; d < b.size(); ++d) {
      dot += static_cast<double>(a[d]) * b[d];
      nb += static_cast<double>(b[d]) * b[d];
    }
    nb = std::sqrt(nb);
    if (nb == 0.0)
      throw ValidationError("zero-norm embedding for case " + index.case_ids[i]);
    score[i] = dot / (na * nb);
  }

  std::vector<std::size_t> order;
  order.reserve(index.size() - 1);
  for (std::size_t i = 0; i < index.size(); ++i)
    if (i != anchor) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (score[x] != score[y]) return score[x] > score[y];
    return index.case_ids[x] < index.case_ids[y];
  });
  return order;
}

}  // namespace detail

inline std::vector<std::string> topk_retrieve(const CorpusIndex& index,
                                              const std::string& anchor_id, int k) {
  if (k < 1) throw ValidationError("k must be >= 1");
  const std::size_t anchor = index.row_of(anchor_id);
  const auto order = detail::ranked_rows(index, anchor);
  std::vector<std::string> ids;
  ids.reserve(std::min<std::size_t>(order.size(), static_cast<std::size_t>(k)));
  for (std::size_t i = 0; i < order.size() && i < static_cast<std::size_t>(k); ++i)
    ids.push_back(index.case_ids[order[i]]);
  return ids;
}

// --- retrieval-based pools (same-label positive, different-label negatives) ---

struct MineLccResult {
  std::vector<LccPool> pools;
  std::vector<std::string> skipped;  // anchors with no same-label positive
};

inline MineLccResult mine_lcc_pools(const CorpusIndex& index,
                                    int pool_size = kLccPoolSize,
                                    std::uint64_t seed = 0, int workers = 1) {
  if (pool_size < 1) throw ValidationError("pool_size must be >= 1");
  const std::size_t n = index.size();
  std::vector<LccPool> pools(n);
  std::vector<char> ok(n, 0);

  parallel_for(n, workers, [&](std::size_t row) {
    const LabelPair anchor_label = index.labels[row];
    const auto order = detail::ranked_rows(index, row);

    LccPool pool;
    pool.anchor_id = index.case_ids[row];
    std::vector<std::size_t> different;  // every different-label row, ranked
    for (std::size_t i : order) {
      if (index.labels[i] == anchor_label) {
        if (pool.positive_id.empty()) pool.positive_id = index.case_ids[i];
      } else {
        different.push_back(i);
      }
    }
    if (different.empty())
      throw ValidationError("corpus has no case with a different label than " +
                            pool.anchor_id);
    if (pool.positive_id.empty()) return;  // skipped: label pair has one case

    const auto want = static_cast<std::size_t>(pool_size);
    for (std::size_t i = 0; i < different.size() && i < want; ++i)
      pool.negative_ids.push_back(index.case_ids[different[i]]);
    if (pool.negative_ids.size() < want) {
      // sparse corpus: top-up with seeded draws from the qualifying set
      pool.backfilled = true;
      Rng rng(mix_seed(seed, row));
      while (pool.negative_ids.size() < want)
        pool.negative_ids.push_back(index.case_ids[different[rng.index(different.size())]]);
    }
    pools[row] = std::move(pool);
    ok[row] = 1;
  });

  MineLccResult result;
  for (std::size_t row = 0; row < n; ++row) {
    if (ok[row])
      result.pools.push_back(std::move(pools[row]));
    else
      result.skipped.push_back(index.case_ids[row]);
  }
  return result;
}

// --- classifier-based decision negatives ---------------------------------------

struct MinerClassifier {
  EncoderModel model;
  std::vector<ClassifierHead> heads;  // articles, charges

  const ClassifierHead& head(Task task) const {
    for (const auto& h : heads)
      if (h.task == task) return h;
    throw ValidationError("classifier is missing the " + task_name(task) + " head");
  }
};

inline MinerClassifier train_miner_classifier(const EncoderModel& init,
                                              std::span<const LegalCase> cases,
                                              const LabelCatalog& catalog,
                                              const Vocabulary& vocab,
                                              FinetuneConfig config) {
  if (cases.empty()) throw ValidationError("empty classifier training set");
  MinerClassifier clf;
  clf.model = init;
  config.tasks = {Task::kArticles, Task::kCharges};
  clf.heads = init_heads(clf.model, catalog, config.tasks, config.seed);
  finetune(clf.model, clf.heads, cases, vocab, config);
  return clf;
}

// The n highest-logit wrong labels for one task; ties by ascending label id.
inline std::vector<int> top_wrong_labels(const ClassifierHead& head,
                                         std::span<const double> h, int true_label,
                                         int n) {
  if (head.classes() < n + 1)
    throw ValidationError("catalog has too few " + task_name(head.task) +
                          " labels to mine " + std::to_string(n) + " negatives");
  const auto logits = head_logits(head, h);
  std::vector<std::size_t> order(logits.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (logits[x] != logits[y]) return logits[x] > logits[y];
    return head.label_ids[x] < head.label_ids[y];
  });
  std::vector<int> out;
  for (std::size_t i : order) {
    if (head.label_ids[i] == true_label) continue;
    out.push_back(head.label_ids[i]);
    if (static_cast<int>(out.size()) == n) break;
  }
  return out;
}

inline std::pair<std::vector<int>, std::vector<int>> mine_label_negatives(
    const MinerClassifier& clf, const LegalCase& c, const Vocabulary& vocab,
    int n = kLabelNegatives) {
  const auto h = encode(clf.model, tokenize(c.fact_text, vocab), Head::kFact);
  return {top_wrong_labels(clf.head(Task::kArticles), h, c.article_id, n),
          top_wrong_labels(clf.head(Task::kCharges), h, c.charge_id, n)};
}

inline std::vector<LdmPool> mine_ldm_pools(const MinerClassifier& clf,
                                           std::span<const LegalCase> cases,
                                           const Vocabulary& vocab,
                                           int n = kLabelNegatives, int workers = 1) {
  std::vector<LdmPool> pools(cases.size());
  parallel_for(cases.size(), workers, [&](std::size_t i) {
    auto [articles, charges] = mine_label_negatives(clf, cases[i], vocab, n);
    LdmPool pool;
    pool.anchor_id = cases[i].case_id;
    pool.neg_articles = std::move(articles);
    pool.neg_charges = std::move(charges);
    pool.decision_negatives =
        build_decision_pool({cases[i].article_id, cases[i].charge_id},
                            pool.neg_articles, pool.neg_charges);
    pools[i] = std::move(pool);
  });
  return pools;
}

}  // namespace duet
