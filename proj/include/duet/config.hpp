#pragma once

#include <charconv>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "duet/common.hpp"
#include "duet/corpus.hpp"
#include "duet/synth.hpp"
#include "duet/trainer.hpp"
#include "duet/verbalizer.hpp"

namespace duet {

// Everything a pipeline run can be told, with the documented defaults.
// Section [run] carries the one base seed; phases derive their streams.
struct RunConfig {
  struct Paths {
    std::string cases = "cases.jsonl";
    std::string catalog = "catalog.jsonl";
    std::string filtered_cases = "filtered.jsonl";
    std::string vocab = "vocab.json";
    std::string lcc_pools = "lcc_pools.jsonl";
    std::string ldm_pools = "ldm_pools.jsonl";
    std::string run_dir = "run";
    std::string checkpoint;  // empty = seed-initialized encoder
    std::string model = "model.duet";
    std::string embeddings = "embeddings.bin";
    std::string sidecar = "embeddings.csv";
    std::string baseline_embeddings;
    std::string baseline_sidecar;
    std::string reports_dir = "reports";
    std::string predictions = "predictions.csv";
    std::string gold;  // fixture-mode eval inputs
    std::string pred;
    std::string synth_dir = "synth";
  } paths;

  struct Corpus {
    int min_tokens = 10;
    int min_label_count = 100;
    int max_vocab = 50000;
    int max_seq_len = 512;
  } corpus;

  struct Encoder {
    int embed_dim = 64;
    int proj_dim = 256;
    bool share_heads = true;
  } encoder;

  PretrainConfig pretrain;
  FinetuneConfig finetune;

  struct Miner {
    int pool_size = kLccPoolSize;
    int label_negatives = kLabelNegatives;
    int clf_epochs = 10;
    double clf_learning_rate = 5e-6;
    int clf_batch_size = 64;
  } miner;

  std::string decision_template = std::string(kDecisionTemplate);

  struct Eval {
    bool macro_all_classes = false;
    int entropy_bins = 50;
    std::string entropy_task = "charges";
    std::vector<int> dbi_charges;  // empty = every charge in the sidecar
    std::string fixture_task = "fixture";
  } eval;

  SynthConfig synth;

  struct Run {
    std::uint64_t seed = 0;
    int workers = 1;
  } run;
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline int to_int(const std::string& key, const std::string& value) {
  int out = 0;
  const auto r = std::from_chars(value.data(), value.data() + value.size(), out);
  if (r.ec != std::errc() || r.ptr != value.data() + value.size())
    throw ValidationError(key + ": expected an integer, got '" + value + "'");
  return out;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(value.data(), value.data() + value.size(), out);
  if (r.ec != std::errc() || r.ptr != value.data() + value.size())
    throw ValidationError(key + ": expected an unsigned integer, got '" + value + "'");
  return out;
}

inline double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double out = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return out;
  } catch (const std::exception&) {
    throw ValidationError(key + ": expected a number, got '" + value + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ValidationError(key + ": expected true or false, got '" + value + "'");
}

inline std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> parts;
  std::string item;
  std::stringstream ss(value);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

struct KeySpec {
  std::string section;
  std::string key;
  std::string description;
  std::function<std::string(const RunConfig&)> show;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = [] {
    std::vector<KeySpec> list;
    auto str = [&](std::string section, std::string key, std::string desc,
                   std::string RunConfig::Paths::* field) {
      list.push_back({section, key, desc,
                      [field](const RunConfig& c) { return c.paths.*field; },
                      [field](RunConfig& c, const std::string& v) {
                        c.paths.*field = v;
                      }});
    };
    str("paths", "cases", "input case JSONL", &RunConfig::Paths::cases);
    str("paths", "catalog", "label catalog JSONL", &RunConfig::Paths::catalog);
    str("paths", "filtered_cases", "ingest output / training corpus",
        &RunConfig::Paths::filtered_cases);
    str("paths", "vocab", "vocabulary JSON", &RunConfig::Paths::vocab);
    str("paths", "lcc_pools", "retrieval pool JSONL", &RunConfig::Paths::lcc_pools);
    str("paths", "ldm_pools", "decision pool JSONL", &RunConfig::Paths::ldm_pools);
    str("paths", "run_dir", "pretraining output directory",
        &RunConfig::Paths::run_dir);
    str("paths", "checkpoint",
        "starting encoder checkpoint; empty = initialize from run.seed",
        &RunConfig::Paths::checkpoint);
    str("paths", "model", "fine-tuned model checkpoint", &RunConfig::Paths::model);
    str("paths", "embeddings", "embedding matrix file",
        &RunConfig::Paths::embeddings);
    str("paths", "sidecar", "embedding label sidecar CSV",
        &RunConfig::Paths::sidecar);
    str("paths", "baseline_embeddings", "comparison matrix for dbi deltas",
        &RunConfig::Paths::baseline_embeddings);
    str("paths", "baseline_sidecar", "comparison sidecar for dbi deltas",
        &RunConfig::Paths::baseline_sidecar);
    str("paths", "reports_dir", "metric report directory",
        &RunConfig::Paths::reports_dir);
    str("paths", "predictions", "prediction CSV", &RunConfig::Paths::predictions);
    str("paths", "gold", "fixture-mode gold labels, one per line",
        &RunConfig::Paths::gold);
    str("paths", "pred", "fixture-mode predicted labels, one per line",
        &RunConfig::Paths::pred);
    str("paths", "synth_dir", "synth-data output directory",
        &RunConfig::Paths::synth_dir);

    auto reg = [&](std::string section, std::string key, std::string desc,
                   std::function<std::string(const RunConfig&)> show,
                   std::function<void(RunConfig&, const std::string&)> set) {
      list.push_back({std::move(section), std::move(key), std::move(desc),
                      std::move(show), std::move(set)});
    };
    auto num = [&](std::string section, std::string key, std::string desc,
                   auto getter) {
      reg(section, key, desc,
          [getter](const RunConfig& c) { return std::to_string(*getter(const_cast<RunConfig&>(c))); },
          [section, key, getter](RunConfig& c, const std::string& v) {
            *getter(c) = to_int(section + "." + key, v);
          });
    };
    auto dbl = [&](std::string section, std::string key, std::string desc,
                   auto getter) {
      reg(section, key, desc,
          [getter](const RunConfig& c) {
            std::ostringstream os;
            os << *getter(const_cast<RunConfig&>(c));
            return os.str();
          },
          [section, key, getter](RunConfig& c, const std::string& v) {
            *getter(c) = to_double(section + "." + key, v);
          });
    };
    auto flag = [&](std::string section, std::string key, std::string desc,
                    auto getter) {
      reg(section, key, desc,
          [getter](const RunConfig& c) {
            return *getter(const_cast<RunConfig&>(c)) ? "true" : "false";
          },
          [section, key, getter](RunConfig& c, const std::string& v) {
            *getter(c) = to_bool(section + "." + key, v);
          });
    };

    num("corpus", "min_tokens", "drop facts shorter than this many tokens",
        [](RunConfig& c) { return &c.corpus.min_tokens; });
    num("corpus", "min_label_count",
        "drop labels with fewer cases, iterated to a fixed point",
        [](RunConfig& c) { return &c.corpus.min_label_count; });
    num("corpus", "max_vocab", "vocabulary size cap including specials",
        [](RunConfig& c) { return &c.corpus.max_vocab; });
    num("corpus", "max_seq_len", "token sequence cap, start marker included",
        [](RunConfig& c) { return &c.corpus.max_seq_len; });

    num("encoder", "embed_dim", "token embedding width",
        [](RunConfig& c) { return &c.encoder.embed_dim; });
    num("encoder", "proj_dim", "projected representation width",
        [](RunConfig& c) { return &c.encoder.proj_dim; });
    flag("encoder", "share_heads",
         "fact and decision projections share parameters",
         [](RunConfig& c) { return &c.encoder.share_heads; });

    num("pretrain", "epochs", "contrastive pretraining epochs",
        [](RunConfig& c) { return &c.pretrain.epochs; });
    dbl("pretrain", "learning_rate", "pretraining step size",
        [](RunConfig& c) { return &c.pretrain.learning_rate; });
    num("pretrain", "batch_size", "pretraining batch size (>= 2)",
        [](RunConfig& c) { return &c.pretrain.batch_size; });
    dbl("pretrain", "temperature", "contrastive softmax temperature",
        [](RunConfig& c) { return &c.pretrain.temperature; });
    dbl("pretrain", "weight_decay", "decoupled weight decay",
        [](RunConfig& c) { return &c.pretrain.weight_decay; });
    dbl("pretrain", "grad_clip_norm", "global gradient norm cap; <= 0 disables",
        [](RunConfig& c) { return &c.pretrain.grad_clip_norm; });

    num("finetune", "epochs", "fine-tuning epochs",
        [](RunConfig& c) { return &c.finetune.epochs; });
    dbl("finetune", "learning_rate", "fine-tuning step size",
        [](RunConfig& c) { return &c.finetune.learning_rate; });
    num("finetune", "batch_size", "fine-tuning batch size",
        [](RunConfig& c) { return &c.finetune.batch_size; });
    dbl("finetune", "weight_decay", "decoupled weight decay",
        [](RunConfig& c) { return &c.finetune.weight_decay; });
    dbl("finetune", "grad_clip_norm", "global gradient norm cap; <= 0 disables",
        [](RunConfig& c) { return &c.finetune.grad_clip_norm; });
    flag("finetune", "freeze_encoder", "train only the classification heads",
         [](RunConfig& c) { return &c.finetune.freeze_encoder; });
    reg("finetune", "tasks", "comma list of articles,charges,term",
        [](const RunConfig& c) {
          std::string out;
          for (const auto& t : c.finetune.tasks)
            out += (out.empty() ? "" : ",") + task_name(t);
          return out;
        },
        [](RunConfig& c, const std::string& v) {
          c.finetune.tasks.clear();
          for (const auto& part : split_list(v))
            c.finetune.tasks.push_back(parse_task(part));
          if (c.finetune.tasks.empty())
            throw ValidationError("finetune.tasks: empty task list");
        });

    num("miner", "pool_size", "retrieved hard negatives per anchor",
        [](RunConfig& c) { return &c.miner.pool_size; });
    num("miner", "label_negatives", "wrong labels mined per task",
        [](RunConfig& c) { return &c.miner.label_negatives; });
    num("miner", "clf_epochs", "label-negative classifier training epochs",
        [](RunConfig& c) { return &c.miner.clf_epochs; });
    dbl("miner", "clf_learning_rate", "label-negative classifier step size",
        [](RunConfig& c) { return &c.miner.clf_learning_rate; });
    num("miner", "clf_batch_size", "label-negative classifier batch size",
        [](RunConfig& c) { return &c.miner.clf_batch_size; });

    reg("verbalizer", "decision_template",
        "decision rendering template with {article_name} {article_content} "
        "{charge_definition} {charge_name}",
        [](const RunConfig& c) { return c.decision_template; },
        [](RunConfig& c, const std::string& v) { c.decision_template = v; });

    flag("eval", "macro_all_classes",
         "macro-average over the whole catalog instead of gold-present classes",
         [](RunConfig& c) { return &c.eval.macro_all_classes; });
    num("eval", "entropy_bins", "histogram bins for prediction cross-entropy",
        [](RunConfig& c) { return &c.eval.entropy_bins; });
    reg("eval", "entropy_task", "task scored by the entropy command",
        [](const RunConfig& c) { return c.eval.entropy_task; },
        [](RunConfig& c, const std::string& v) {
          parse_task(v);  // validates
          c.eval.entropy_task = v;
        });
    reg("eval", "dbi_charges",
        "comma list of charge ids to cluster; empty = all in the sidecar",
        [](const RunConfig& c) {
          std::string out;
          for (int id : c.eval.dbi_charges)
            out += (out.empty() ? "" : ",") + std::to_string(id);
          return out;
        },
        [](RunConfig& c, const std::string& v) {
          c.eval.dbi_charges.clear();
          for (const auto& part : split_list(v))
            c.eval.dbi_charges.push_back(to_int("eval.dbi_charges", part));
        });
    reg("eval", "fixture_task", "task name used in fixture-mode reports",
        [](const RunConfig& c) { return c.eval.fixture_task; },
        [](RunConfig& c, const std::string& v) { c.eval.fixture_task = v; });

    num("synth", "clusters", "generated charge clusters",
        [](RunConfig& c) { return &c.synth.clusters; });
    num("synth", "cases_per_cluster", "cases per cluster",
        [](RunConfig& c) { return &c.synth.cases_per_cluster; });
    num("synth", "common_words", "shared vocabulary size",
        [](RunConfig& c) { return &c.synth.common_words; });
    num("synth", "signature_words", "per-cluster vocabulary size",
        [](RunConfig& c) { return &c.synth.signature_words; });
    num("synth", "min_case_tokens", "shortest generated fact",
        [](RunConfig& c) { return &c.synth.min_case_tokens; });
    num("synth", "max_case_tokens", "longest generated fact",
        [](RunConfig& c) { return &c.synth.max_case_tokens; });
    dbl("synth", "common_fraction", "share of common-vocabulary tokens",
        [](RunConfig& c) { return &c.synth.common_fraction; });
    dbl("synth", "neighbor_fraction", "share of other-cluster signature tokens",
        [](RunConfig& c) { return &c.synth.neighbor_fraction; });

    reg("run", "seed", "base seed for every derived random stream",
        [](const RunConfig& c) { return std::to_string(c.run.seed); },
        [](RunConfig& c, const std::string& v) {
          c.run.seed = to_u64("run.seed", v);
        });
    num("run", "workers", "worker threads (1 = fully serial)",
        [](RunConfig& c) { return &c.run.workers; });
    return list;
  }();
  return specs;
}

inline void apply_key(RunConfig& config, const std::string& section,
                      const std::string& key, const std::string& value) {
  for (const auto& spec : key_specs()) {
    if (spec.section == section && spec.key == key) {
      spec.set(config, value);
      return;
    }
  }
  throw ValidationError("unknown config key: " + section + "." + key);
}

}  // namespace config_detail

// INI-style text: [section] headers, key = value lines, # or ; comments.
inline void apply_config_text(RunConfig& config, const std::string& text,
                              const std::string& origin) {
  std::string section;
  std::size_t lineno = 0;
  std::stringstream ss(text);
  std::string raw;
  while (std::getline(ss, raw)) {
    ++lineno;
    const std::string line = config_detail::trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ValidationError(origin + ":" + std::to_string(lineno) +
                              ": unterminated section header");
      section = config_detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError(origin + ":" + std::to_string(lineno) +
                            ": expected key = value");
    if (section.empty())
      throw ValidationError(origin + ":" + std::to_string(lineno) +
                            ": key outside any [section]");
    config_detail::apply_key(config, section,
                             config_detail::trim(line.substr(0, eq)),
                             config_detail::trim(line.substr(eq + 1)));
  }
}

// Command-line override: section.key=value.
inline void apply_override(RunConfig& config, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ValidationError("override must look like section.key=value: " +
                          assignment);
  const std::string path = config_detail::trim(assignment.substr(0, eq));
  const std::size_t dot = path.find('.');
  if (dot == std::string::npos)
    throw ValidationError("override key must be section.key: " + path);
  config_detail::apply_key(config, path.substr(0, dot), path.substr(dot + 1),
                           config_detail::trim(assignment.substr(eq + 1)));
}

// Generated key documentation (--config-reference).
inline std::string config_reference() {
  const RunConfig defaults;
  std::string out = "Configuration keys (key = default): \n";
  std::string section;
  for (const auto& spec : config_detail::key_specs()) {
    if (spec.section != section) {
      section = spec.section;
      out += "\n[" + section + "]\n";
    }
    std::string value = spec.show(defaults);
    if (value.empty()) value = "(empty)";
    out += "  " + spec.key + " = " + value + "\n      " + spec.description + "\n";
  }
  return out;
}

}  // namespace duet
