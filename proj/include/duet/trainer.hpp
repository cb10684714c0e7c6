#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "duet/common.hpp"
#include "duet/corpus.hpp"
#include "duet/encoder.hpp"
#include "duet/io.hpp"
#include "duet/objective.hpp"
#include "duet/optimizer.hpp"
#include "duet/pools.hpp"
#include "duet/verbalizer.hpp"

namespace duet {

// --- configs -----------------------------------------------------------------

struct PretrainConfig {
  int epochs = 5;
  double learning_rate = 1e-5;
  int batch_size = 32;
  double temperature = 0.05;
  double weight_decay = 0.01;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const {
    if (epochs < 0) throw ValidationError("epochs must be >= 0");
    if (batch_size < 2)
      throw ValidationError("batch_size must be >= 2 (in-batch negatives)");
    if (learning_rate < 0.0) throw ValidationError("learning_rate must be >= 0");
    if (temperature <= 0.0) throw ValidationError("temperature must be > 0");
    if (workers < 1) throw ValidationError("workers must be >= 1");
  }
};

enum class Task { kArticles, kCharges, kTerm };

inline std::string task_name(Task t) {
  switch (t) {
    case Task::kArticles: return "articles";
    case Task::kCharges: return "charges";
    case Task::kTerm: return "term";
  }
  throw ValidationError("unknown task");
}

inline Task parse_task(const std::string& name) {
  if (name == "articles") return Task::kArticles;
  if (name == "charges") return Task::kCharges;
  if (name == "term") return Task::kTerm;
  throw ValidationError("unknown task: " + name +
                        " (expected articles, charges or term)");
}

struct FinetuneConfig {
  int epochs = 10;
  double learning_rate = 5e-6;
  int batch_size = 64;
  std::vector<Task> tasks = {Task::kArticles, Task::kCharges, Task::kTerm};
  double weight_decay = 0.01;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;
  bool freeze_encoder = false;

  void validate() const {
    if (epochs < 0) throw ValidationError("epochs must be >= 0");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (learning_rate < 0.0) throw ValidationError("learning_rate must be >= 0");
    if (tasks.empty()) throw ValidationError("at least one fine-tuning task");
    for (std::size_t i = 0; i < tasks.size(); ++i)
      for (std::size_t j = i + 1; j < tasks.size(); ++j)
        if (tasks[i] == tasks[j]) throw ValidationError("duplicate task");
  }
};

// --- batch assembly ------------------------------------------------------------
// Every batch member contributes its own hard negative plus, for the other
// members, their anchors/positives/negatives: 3b-2 fact negatives and 2b-1
// decision negatives per instance before duplicate collapse.

struct LccBatchItem {
  std::string anchor_id, positive_id, negative_id;
};

struct AssembledLcc {
  ContrastiveInstance instance;
  std::vector<std::string> negative_ids;  // aligned with instance.negatives
};

inline std::vector<AssembledLcc> assemble_lcc_batch(
    std::span<const LccBatchItem> items,
    const std::function<std::span<const double>(const std::string&)>& embed,
    double temperature, std::size_t* collapsed = nullptr) {
  if (items.size() < 2)
    throw ValidationError("in-batch negatives need a batch of >= 2");
  std::size_t dropped = 0;
  std::vector<AssembledLcc> out;
  out.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    if (it.anchor_id == it.positive_id || it.anchor_id == it.negative_id ||
        it.positive_id == it.negative_id)
      throw ValidationError("case " + it.anchor_id +
                            " repeats a case id across instance roles");
    AssembledLcc a;
    a.instance.anchor = embed(it.anchor_id);
    a.instance.positive = embed(it.positive_id);
    a.instance.temperature = temperature;
    auto push = [&](const std::string& id) {
      // an item identical to the instance's own anchor or positive would
      // penalize the true answer; drop it
      if (id == it.anchor_id || id == it.positive_id) {
        ++dropped;
        return;
      }
      a.instance.negatives.push_back(embed(id));
      a.negative_ids.push_back(id);
    };
    push(it.negative_id);
    for (std::size_t j = 0; j < items.size(); ++j)
      if (j != i) push(items[j].anchor_id);
    for (std::size_t j = 0; j < items.size(); ++j)
      if (j != i) push(items[j].positive_id);
    for (std::size_t j = 0; j < items.size(); ++j)
      if (j != i) push(items[j].negative_id);
    out.push_back(std::move(a));
  }
  if (collapsed) *collapsed = dropped;
  return out;
}

struct LdmBatchItem {
  LabelPair positive, negative;
};

struct AssembledLdm {
  ContrastiveInstance instance;
  std::vector<LabelPair> negative_pairs;
};

inline std::vector<AssembledLdm> assemble_ldm_batch(
    std::span<const LdmBatchItem> items,
    const std::function<std::span<const double>(const std::string&)>& embed_fact,
    std::span<const std::string> anchor_ids,
    const std::function<std::span<const double>(const LabelPair&)>& embed_decision,
    double temperature, std::size_t* collapsed = nullptr) {
  if (items.size() < 2)
    throw ValidationError("in-batch negatives need a batch of >= 2");
  if (anchor_ids.size() != items.size())
    throw ValidationError("anchor list does not match batch");
  std::size_t dropped = 0;
  std::vector<AssembledLdm> out;
  out.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    if (it.positive == it.negative)
      throw ValidationError("decision negative equals the true decision");
    AssembledLdm a;
    a.instance.anchor = embed_fact(anchor_ids[i]);
    a.instance.positive = embed_decision(it.positive);
    a.instance.temperature = temperature;
    auto push = [&](const LabelPair& pair) {
      if (pair == it.positive) {  // true decision shown as a negative
        ++dropped;
        return;
      }
      a.instance.negatives.push_back(embed_decision(pair));
      a.negative_pairs.push_back(pair);
    };
    push(it.negative);
    for (std::size_t j = 0; j < items.size(); ++j)
      if (j != i) push(items[j].positive);
    for (std::size_t j = 0; j < items.size(); ++j)
      if (j != i) push(items[j].negative);
    out.push_back(std::move(a));
  }
  if (collapsed) *collapsed = dropped;
  return out;
}

// --- batch loss + gradient computation ------------------------------------------

struct ContrastiveBatch {
  std::vector<LccBatchItem> lcc;   // per instance, aligned with ldm
  std::vector<LdmBatchItem> ldm;
  std::vector<std::string> anchors;
};

struct StepStats {
  double loss_lcc = 0.0;
  double loss_ldm = 0.0;
  std::size_t collapsed = 0;
  double grad_norm = 0.0;

  double total() const { return loss_lcc + loss_ldm; }
};

// Mean per-instance loss of both objectives over one batch, with gradients
// accumulated into grads. Each unique text is encoded exactly once and feeds
// both views; reduction runs in fixed batch order for any worker count.
inline StepStats contrastive_batch_gradients(
    const EncoderModel& model,
    const std::unordered_map<std::string, TokenSequence>& fact_tokens,
    const std::map<LabelPair, TokenSequence>& decision_tokens,
    const ContrastiveBatch& batch, double temperature, int workers,
    EncoderGradients& grads) {
  const std::size_t b = batch.lcc.size();
  if (b < 2) throw ValidationError("batch must have >= 2 instances");
  if (batch.ldm.size() != b || batch.anchors.size() != b)
    throw ValidationError("batch views disagree in length");

  // encode each unique text once
  std::vector<std::string> fact_order;
  std::unordered_map<std::string, std::size_t> fact_slot;
  auto fact_key = [&](const std::string& id) {
    if (fact_slot.emplace(id, fact_order.size()).second) fact_order.push_back(id);
  };
  std::vector<LabelPair> dec_order;
  std::map<LabelPair, std::size_t> dec_slot;
  auto dec_key = [&](const LabelPair& p) {
    if (dec_slot.emplace(p, dec_order.size()).second) dec_order.push_back(p);
  };
  for (std::size_t i = 0; i < b; ++i) {
    fact_key(batch.lcc[i].anchor_id);
    fact_key(batch.lcc[i].positive_id);
    fact_key(batch.lcc[i].negative_id);
    dec_key(batch.ldm[i].positive);
    dec_key(batch.ldm[i].negative);
  }

  std::vector<std::vector<double>> fact_emb(fact_order.size());
  parallel_for(fact_order.size(), workers, [&](std::size_t u) {
    fact_emb[u] = encode(model, fact_tokens.at(fact_order[u]), Head::kFact);
  });
  std::vector<std::vector<double>> dec_emb(dec_order.size());
  parallel_for(dec_order.size(), workers, [&](std::size_t u) {
    dec_emb[u] = encode(model, decision_tokens.at(dec_order[u]), Head::kDecision);
  });

  auto fact_view = [&](const std::string& id) {
    return std::span<const double>(fact_emb[fact_slot.at(id)]);
  };
  auto dec_view = [&](const LabelPair& p) {
    return std::span<const double>(dec_emb[dec_slot.at(p)]);
  };

  StepStats stats;
  std::size_t collapsed_lcc = 0, collapsed_ldm = 0;
  const auto lcc = assemble_lcc_batch(batch.lcc, fact_view, temperature,
                                      &collapsed_lcc);
  const auto ldm = assemble_ldm_batch(batch.ldm, fact_view, batch.anchors,
                                      dec_view, temperature, &collapsed_ldm);
  stats.collapsed = collapsed_lcc + collapsed_ldm;

  // per-instance losses and embedding gradients, reduced in batch order
  const double inv_b = 1.0 / static_cast<double>(b);
  std::vector<double> lcc_loss(b), ldm_loss(b);
  std::vector<InstanceGradients> lcc_grad(b), ldm_grad(b);
  parallel_for(b, workers, [&](std::size_t i) {
    lcc_loss[i] = info_nce(lcc[i].instance).value;
    ldm_loss[i] = info_nce(ldm[i].instance).value;
    lcc_grad[i] = info_nce_backward(lcc[i].instance, inv_b);
    ldm_grad[i] = info_nce_backward(ldm[i].instance, inv_b);
  });

  for (std::size_t i = 0; i < b; ++i) {
    stats.loss_lcc += lcc_loss[i] * inv_b;
    stats.loss_ldm += ldm_loss[i] * inv_b;
  }
  if (!std::isfinite(stats.loss_lcc) || !std::isfinite(stats.loss_ldm))
    throw std::runtime_error(
        "non-finite pretraining loss (lcc=" + std::to_string(stats.loss_lcc) +
        ", ldm=" + std::to_string(stats.loss_ldm) +
        ", batch=" + std::to_string(b) + ")");

  std::vector<std::vector<double>> up_fact(
      fact_order.size(), std::vector<double>(fact_emb[0].size(), 0.0));
  std::vector<std::vector<double>> up_dec(
      dec_order.size(), std::vector<double>(fact_emb[0].size(), 0.0));
  auto add = [](std::vector<double>& acc, std::span<const double> g) {
    for (std::size_t k = 0; k < g.size(); ++k) acc[k] += g[k];
  };
  for (std::size_t i = 0; i < b; ++i) {
    add(up_fact[fact_slot.at(batch.lcc[i].anchor_id)], lcc_grad[i].anchor);
    add(up_fact[fact_slot.at(batch.lcc[i].positive_id)], lcc_grad[i].positive);
    for (std::size_t k = 0; k < lcc[i].negative_ids.size(); ++k)
      add(up_fact[fact_slot.at(lcc[i].negative_ids[k])], lcc_grad[i].negatives[k]);
    add(up_fact[fact_slot.at(batch.anchors[i])], ldm_grad[i].anchor);
    add(up_dec[dec_slot.at(batch.ldm[i].positive)], ldm_grad[i].positive);
    for (std::size_t k = 0; k < ldm[i].negative_pairs.size(); ++k)
      add(up_dec[dec_slot.at(ldm[i].negative_pairs[k])], ldm_grad[i].negatives[k]);
  }

  for (std::size_t u = 0; u < fact_order.size(); ++u)
    encode_backward(model, fact_tokens.at(fact_order[u]), Head::kFact, up_fact[u],
                    grads);
  for (std::size_t u = 0; u < dec_order.size(); ++u)
    encode_backward(model, decision_tokens.at(dec_order[u]), Head::kDecision,
                    up_dec[u], grads);
  return stats;
}

// --- pretraining ---------------------------------------------------------------

struct PretrainData {
  std::span<const LegalCase> cases;
  const LabelCatalog* catalog = nullptr;
  const Vocabulary* vocab = nullptr;
  std::span<const LccPool> lcc_pools;
  std::span<const LdmPool> ldm_pools;
  std::string decision_template = std::string(kDecisionTemplate);
};

struct PretrainStats {
  std::vector<double> epoch_mean_loss;
  std::size_t collapsed = 0;
  std::size_t skipped_cases = 0;  // corpus rows without pool coverage
};

// Dual-view contrastive pretraining: one forward pass per unique text per
// step feeds both objectives, and their sum is backpropagated.
class Pretrainer {
 public:
  Pretrainer(EncoderModel& model, const PretrainData& data, PretrainConfig config)
      : model_(model),
        config_(config),
        temperature_(config.temperature),
        grads_(model),
        optimizer_({config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay,
                    config.grad_clip_norm},
                   block_sizes(model)) {
    config_.validate();
    if (data.cases.empty()) throw ValidationError("empty pretraining corpus");

    std::unordered_map<std::string, const LccPool*> lcc_by_anchor;
    for (const auto& p : data.lcc_pools) lcc_by_anchor[p.anchor_id] = &p;
    std::unordered_map<std::string, const LdmPool*> ldm_by_anchor;
    for (const auto& p : data.ldm_pools) ldm_by_anchor[p.anchor_id] = &p;

    std::unordered_map<std::string, const LegalCase*> case_by_id;
    for (const auto& c : data.cases) case_by_id[c.case_id] = &c;

    auto cache_fact = [&](const std::string& id) {
      if (fact_tokens_.count(id)) return;
      auto it = case_by_id.find(id);
      if (it == case_by_id.end())
        throw ValidationError("pool references unknown case: " + id);
      fact_tokens_.emplace(id, tokenize(it->second->fact_text, *data.vocab));
    };
    auto cache_decision = [&](const LabelPair& pair) {
      if (decision_tokens_.count(pair)) return;
      const auto text =
          render_decision(pair.article_id, pair.charge_id, *data.catalog,
                          data.decision_template)
              .text;
      decision_tokens_.emplace(pair, tokenize(text, *data.vocab));
    };

    for (const auto& c : data.cases) {
      auto lcc = lcc_by_anchor.find(c.case_id);
      auto ldm = ldm_by_anchor.find(c.case_id);
      if (lcc == lcc_by_anchor.end() || ldm == ldm_by_anchor.end()) {
        ++skipped_cases_;
        continue;
      }
      Row row;
      row.anchor_id = c.case_id;
      row.true_pair = {c.article_id, c.charge_id};
      row.lcc = lcc->second;
      row.ldm = ldm->second;
      cache_fact(row.anchor_id);
      cache_fact(row.lcc->positive_id);
      for (const auto& id : row.lcc->negative_ids) cache_fact(id);
      cache_decision(row.true_pair);
      for (const auto& pair : row.ldm->decision_negatives) cache_decision(pair);
      rows_.push_back(row);
    }
    if (rows_.empty())
      throw ValidationError("no pretraining case is covered by both pool files");
  }

  std::size_t trainable_cases() const { return rows_.size(); }
  std::size_t skipped_cases() const { return skipped_cases_; }

  // One optimization step over the given rows; rng drives hard-negative picks.
  StepStats step(std::span<const std::size_t> batch, Rng& rng) {
    const std::size_t b = batch.size();
    if (b < 2) throw ValidationError("batch must have >= 2 instances");

    ContrastiveBatch views;
    views.lcc.resize(b);
    views.ldm.resize(b);
    views.anchors.resize(b);
    for (std::size_t i = 0; i < b; ++i) {
      const Row& row = rows_.at(batch[i]);
      views.anchors[i] = row.anchor_id;
      views.lcc[i] = {row.anchor_id, row.lcc->positive_id,
                      row.lcc->negative_ids[rng.index(row.lcc->negative_ids.size())]};
      views.ldm[i] = {row.true_pair,
                      row.ldm->decision_negatives[rng.index(
                          row.ldm->decision_negatives.size())]};
    }

    grads_.zero();
    StepStats stats =
        contrastive_batch_gradients(model_, fact_tokens_, decision_tokens_, views,
                                    temperature_, config_.workers, grads_);
    stats.grad_norm = optimizer_.step(model_.param_views(),
                                      grads_.views(model_.config.share_heads));
    return stats;
  }

  // Full loop: epoch-seeded shuffling, checkpoints, loss log.
  PretrainStats run(const fs::path& run_dir) {
    save_checkpoint(model_, run_dir / "epoch-0.duet");
    std::string log = "epoch,step,loss_lcc,loss_ldm,loss_total\n";
    PretrainStats stats;
    stats.skipped_cases = skipped_cases_;
    for (int epoch = 1; epoch <= config_.epochs; ++epoch) {
      Rng rng = Rng::for_epoch(config_.seed, static_cast<std::uint64_t>(epoch));
      std::vector<std::size_t> order(rows_.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng.shuffle(order);

      double epoch_loss = 0.0;
      std::size_t steps = 0;
      const auto bsz = static_cast<std::size_t>(config_.batch_size);
      for (std::size_t lo = 0; lo + 2 <= order.size(); lo += bsz) {
        const std::size_t hi = std::min(lo + bsz, order.size());
        if (hi - lo < 2) break;  // final partial batch too small
        const StepStats s = step(std::span(order).subspan(lo, hi - lo), rng);
        epoch_loss += s.total();
        stats.collapsed += s.collapsed;
        ++steps;
        log += std::to_string(epoch) + "," + std::to_string(steps) + "," +
               io::fmt_double(s.loss_lcc) + "," + io::fmt_double(s.loss_ldm) +
               "," + io::fmt_double(s.total()) + "\n";
      }
      stats.epoch_mean_loss.push_back(steps ? epoch_loss / static_cast<double>(steps)
                                            : 0.0);
      save_checkpoint(model_, run_dir / ("epoch-" + std::to_string(epoch) + ".duet"));
    }
    io::write_file_atomic(run_dir / "loss.csv", log);
    return stats;
  }

 private:
  struct Row {
    std::string anchor_id;
    LabelPair true_pair;
    const LccPool* lcc = nullptr;
    const LdmPool* ldm = nullptr;
  };

  static std::vector<std::size_t> block_sizes(EncoderModel& model) {
    std::vector<std::size_t> sizes;
    for (const auto& v : model.param_views()) sizes.push_back(v.size());
    return sizes;
  }

  EncoderModel& model_;
  PretrainConfig config_;
  double temperature_;
  EncoderGradients grads_;
  AdamW optimizer_;
  std::vector<Row> rows_;
  std::unordered_map<std::string, TokenSequence> fact_tokens_;
  std::map<LabelPair, TokenSequence> decision_tokens_;
  std::size_t skipped_cases_ = 0;
};

// --- classification heads and fine-tuning ---------------------------------------

struct ClassifierHead {
  Task task = Task::kArticles;
  std::vector<int> label_ids;  // ascending catalog ids (dense index = position)
  std::vector<float> w;        // [proj_dim][classes], row-major in->out
  std::vector<float> b;        // [classes]

  int classes() const { return static_cast<int>(label_ids.size()); }

  int dense_index(int label_id) const {
    auto it = std::lower_bound(label_ids.begin(), label_ids.end(), label_id);
    if (it == label_ids.end() || *it != label_id)
      throw ValidationError(task_name(task) + " label " + std::to_string(label_id) +
                            " is outside the trained label set");
    return static_cast<int>(it - label_ids.begin());
  }
};

inline std::vector<int> task_label_ids(Task task, const LabelCatalog& catalog) {
  std::vector<int> ids;
  if (task == Task::kTerm) {
    for (int i = 0; i < kTermClasses; ++i) ids.push_back(i);
    return ids;
  }
  const auto& table = task == Task::kArticles ? catalog.articles : catalog.charges;
  for (const auto& [id, entry] : table) ids.push_back(id);
  return ids;
}

inline std::vector<ClassifierHead> init_heads(const EncoderModel& model,
                                              const LabelCatalog& catalog,
                                              std::span<const Task> tasks,
                                              std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x68656164));  // distinct stream from encoder init
  std::vector<ClassifierHead> heads;
  for (Task task : tasks) {
    ClassifierHead head;
    head.task = task;
    head.label_ids = task_label_ids(task, catalog);
    if (head.label_ids.size() < 2)
      throw ValidationError(task_name(task) +
                            " needs at least 2 labels to train a head");
    const auto pd = static_cast<std::size_t>(model.config.proj_dim);
    const auto c = static_cast<std::size_t>(head.classes());
    const double a = std::sqrt(6.0 / (static_cast<double>(pd) + static_cast<double>(c)));
    head.w.resize(pd * c);
    for (auto& v : head.w) v = static_cast<float>(rng.uniform(-a, a));
    head.b.assign(c, 0.0f);
    heads.push_back(std::move(head));
  }
  return heads;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double sum = 0.0;
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

inline std::vector<double> head_logits(const ClassifierHead& head,
                                       std::span<const double> h) {
  const std::size_t c = static_cast<std::size_t>(head.classes());
  if (h.size() * c != head.w.size())
    throw ValidationError("embedding dimension does not match head");
  std::vector<double> z(c);
  for (std::size_t j = 0; j < c; ++j) z[j] = head.b[j];
  for (std::size_t d = 0; d < h.size(); ++d) {
    const float* row = head.w.data() + d * c;
    for (std::size_t j = 0; j < c; ++j) z[j] += h[d] * row[j];
  }
  return z;
}

struct Prediction {
  int label_id = 0;
  std::vector<double> probs;  // aligned with head.label_ids
};

inline Prediction predict_one(const ClassifierHead& head, std::span<const double> h) {
  Prediction pred;
  pred.probs = softmax(head_logits(head, h));
  std::size_t best = 0;
  for (std::size_t j = 1; j < pred.probs.size(); ++j)
    if (pred.probs[j] > pred.probs[best]) best = j;  // ties keep lowest label id
  pred.label_id = head.label_ids[best];
  return pred;
}

inline int gold_label(const LegalCase& c, Task task) {
  switch (task) {
    case Task::kArticles: return c.article_id;
    case Task::kCharges: return c.charge_id;
    case Task::kTerm: return c.term_id;
  }
  throw ValidationError("unknown task");
}

struct FinetuneResult {
  std::vector<double> epoch_mean_loss;
};

struct HeadGradients {
  std::vector<std::vector<double>> w, b;  // one pair per head

  explicit HeadGradients(std::span<const ClassifierHead> heads) {
    for (const auto& head : heads) {
      w.emplace_back(head.w.size(), 0.0);
      b.emplace_back(head.b.size(), 0.0);
    }
  }

  void zero() {
    for (auto& v : w) std::fill(v.begin(), v.end(), 0.0);
    for (auto& v : b) std::fill(v.begin(), v.end(), 0.0);
  }
};

// Mean over the selected rows of the per-task cross-entropy sums, with
// gradients accumulated into the encoder and head buffers.
inline double finetune_batch_gradients(const EncoderModel& model,
                                       std::span<const ClassifierHead> heads,
                                       std::span<const LegalCase> cases,
                                       std::span<const TokenSequence> tokens,
                                       std::span<const std::size_t> rows,
                                       bool freeze_encoder,
                                       EncoderGradients& enc_grads,
                                       HeadGradients& head_grads) {
  if (rows.empty()) throw ValidationError("empty batch");
  const double inv_b = 1.0 / static_cast<double>(rows.size());
  double batch_loss = 0.0;
  for (std::size_t row : rows) {
    const auto h = encode(model, tokens[row], Head::kFact);
    std::vector<double> dh(h.size(), 0.0);
    for (std::size_t t = 0; t < heads.size(); ++t) {
      const auto& head = heads[t];
      const int gold = head.dense_index(gold_label(cases[row], head.task));
      const auto probs = softmax(head_logits(head, h));
      batch_loss +=
          -std::log(std::max(probs[static_cast<std::size_t>(gold)], 1e-300)) *
          inv_b;
      const std::size_t c = probs.size();
      for (std::size_t j = 0; j < c; ++j) {
        const double dz =
            (probs[j] - (static_cast<int>(j) == gold ? 1.0 : 0.0)) * inv_b;
        head_grads.b[t][j] += dz;
        for (std::size_t d = 0; d < h.size(); ++d) {
          head_grads.w[t][d * c + j] += h[d] * dz;
          dh[d] += head.w[d * c + j] * dz;
        }
      }
    }
    if (!freeze_encoder)
      encode_backward(model, tokens[row], Head::kFact, dh, enc_grads);
  }
  return batch_loss;
}

// Joint softmax cross-entropy over all task heads; encoder parameters train
// too unless frozen. Batch loss is the mean over instances of per-task sums.
inline FinetuneResult finetune(EncoderModel& model,
                               std::vector<ClassifierHead>& heads,
                               std::span<const LegalCase> cases,
                               const Vocabulary& vocab,
                               const FinetuneConfig& config) {
  config.validate();
  if (cases.empty()) throw ValidationError("empty fine-tuning corpus");
  if (heads.empty()) throw ValidationError("no classification heads");

  std::vector<TokenSequence> tokens;
  tokens.reserve(cases.size());
  for (const auto& c : cases) tokens.push_back(tokenize(c.fact_text, vocab));

  // optimizer blocks: encoder first (unless frozen), then head parameters
  std::vector<std::size_t> sizes;
  const auto encoder_views = model.param_views();
  if (!config.freeze_encoder)
    for (const auto& v : encoder_views) sizes.push_back(v.size());
  for (auto& head : heads) {
    sizes.push_back(head.w.size());
    sizes.push_back(head.b.size());
  }
  AdamW optimizer({config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay,
                   config.grad_clip_norm},
                  sizes);

  EncoderGradients enc_grads(model);
  HeadGradients head_grads(heads);

  FinetuneResult result;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng rng = Rng::for_epoch(config.seed, static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(cases.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    double epoch_loss = 0.0;
    std::size_t steps = 0;
    const auto bsz = static_cast<std::size_t>(config.batch_size);
    for (std::size_t lo = 0; lo < order.size(); lo += bsz) {
      const std::size_t hi = std::min(lo + bsz, order.size());

      enc_grads.zero();
      head_grads.zero();
      const double batch_loss = finetune_batch_gradients(
          model, heads, cases, tokens, std::span(order).subspan(lo, hi - lo),
          config.freeze_encoder, enc_grads, head_grads);
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("non-finite fine-tuning loss at epoch " +
                                 std::to_string(epoch));

      std::vector<std::span<float>> params;
      std::vector<std::span<double>> grads;
      if (!config.freeze_encoder) {
        for (auto v : model.param_views()) params.push_back(v);
        for (auto v : enc_grads.views(model.config.share_heads)) grads.push_back(v);
      }
      for (std::size_t t = 0; t < heads.size(); ++t) {
        params.emplace_back(heads[t].w);
        params.emplace_back(heads[t].b);
        grads.emplace_back(head_grads.w[t]);
        grads.emplace_back(head_grads.b[t]);
      }
      optimizer.step(params, grads);
      epoch_loss += batch_loss;
      ++steps;
    }
    result.epoch_mean_loss.push_back(steps ? epoch_loss / static_cast<double>(steps)
                                           : 0.0);
  }
  return result;
}

inline std::map<Task, Prediction> predict(const EncoderModel& model,
                                          std::span<const ClassifierHead> heads,
                                          const LegalCase& c,
                                          const Vocabulary& vocab) {
  const auto h = encode(model, tokenize(c.fact_text, vocab), Head::kFact);
  std::map<Task, Prediction> out;
  for (const auto& head : heads) out[head.task] = predict_one(head, h);
  return out;
}

// --- head persistence inside checkpoints ------------------------------------

inline void attach_heads(EncoderModel& model, std::span<const ClassifierHead> heads) {
  for (const auto& head : heads) {
    const std::string base = "head." + task_name(head.task) + ".";
    const auto pd = static_cast<std::uint32_t>(model.config.proj_dim);
    const auto c = static_cast<std::uint32_t>(head.classes());
    model.extras[base + "weight"] = Tensor{{pd, c}, head.w};
    model.extras[base + "bias"] = Tensor{{c}, head.b};
    Tensor labels{{c}, {}};
    labels.data.reserve(head.label_ids.size());
    for (int id : head.label_ids) labels.data.push_back(static_cast<float>(id));
    model.extras[base + "labels"] = std::move(labels);
  }
}

inline std::vector<ClassifierHead> extract_heads(const EncoderModel& model) {
  std::vector<ClassifierHead> heads;
  for (Task task : {Task::kArticles, Task::kCharges, Task::kTerm}) {
    const std::string base = "head." + task_name(task) + ".";
    auto wit = model.extras.find(base + "weight");
    if (wit == model.extras.end()) continue;
    auto bit = model.extras.find(base + "bias");
    auto lit = model.extras.find(base + "labels");
    if (bit == model.extras.end() || lit == model.extras.end())
      throw ValidationError("checkpoint has a partial " + task_name(task) + " head");
    ClassifierHead head;
    head.task = task;
    for (float v : lit->second.data)
      head.label_ids.push_back(static_cast<int>(std::lround(v)));
    if (!std::is_sorted(head.label_ids.begin(), head.label_ids.end()))
      throw ValidationError("checkpoint head labels are not sorted");
    head.w = wit->second.data;
    head.b = bit->second.data;
    if (head.w.size() != static_cast<std::size_t>(model.config.proj_dim) *
                             head.label_ids.size() ||
        head.b.size() != head.label_ids.size())
      throw ValidationError("checkpoint head shapes are inconsistent");
    heads.push_back(std::move(head));
  }
  return heads;
}

}  // namespace duet
