#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "duet/config.hpp"
#include "duet/corpus.hpp"
#include "duet/encoder.hpp"
#include "duet/eval.hpp"
#include "duet/io.hpp"
#include "duet/miner.hpp"
#include "duet/pools.hpp"
#include "duet/synth.hpp"
#include "duet/trainer.hpp"
#include "duet/verbalizer.hpp"

namespace {

using namespace duet;

struct LoadedCorpus {
  std::vector<LegalCase> cases;
  LabelCatalog catalog;
};

LoadedCorpus load_training_corpus(const RunConfig& cfg) {
  CorpusLoad load = load_corpus(cfg.paths.filtered_cases, cfg.paths.catalog);
  if (load.skipped())
    throw ValidationError(cfg.paths.filtered_cases +
                          ": training corpus has malformed lines; re-run ingest");
  if (load.cases.empty())
    throw ValidationError(cfg.paths.filtered_cases + ": no cases");
  return {std::move(load.cases), std::move(load.catalog)};
}

EncoderModel load_or_init_encoder(const RunConfig& cfg, const Vocabulary& vocab) {
  if (!cfg.paths.checkpoint.empty()) {
    EncoderModel model = load_checkpoint(cfg.paths.checkpoint);
    if (model.config.vocab_size != vocab.size())
      throw ValidationError("checkpoint vocabulary size " +
                            std::to_string(model.config.vocab_size) +
                            " does not match " + cfg.paths.vocab);
    return model;
  }
  EncoderConfig ec;
  ec.vocab_size = vocab.size();
  ec.embed_dim = cfg.encoder.embed_dim;
  ec.proj_dim = cfg.encoder.proj_dim;
  ec.seed = cfg.run.seed;
  ec.share_heads = cfg.encoder.share_heads;
  return init_params(ec);
}

FinetuneConfig finetune_config(const RunConfig& cfg) {
  FinetuneConfig fc = cfg.finetune;
  fc.seed = cfg.run.seed;
  return fc;
}

void cmd_ingest(const RunConfig& cfg) {
  const CorpusLoad load = load_corpus(cfg.paths.cases, cfg.paths.catalog);
  for (const auto& s : load.skipped_catalog)
    std::cout << cfg.paths.catalog << ":" << s.line << ": skipped (" << s.reason
              << ")\n";
  for (const auto& s : load.skipped_cases)
    std::cout << cfg.paths.cases << ":" << s.line << ": skipped (" << s.reason
              << ")\n";
  FilterStats stats;
  const auto kept = filter_cases(load.cases, cfg.corpus.min_tokens,
                                 cfg.corpus.min_label_count, &stats);
  write_cases(cfg.paths.filtered_cases, kept);
  std::cout << "loaded " << load.cases.size() << " cases, kept " << kept.size()
            << " (duplicates/conflicts " << stats.removed_multi_label
            << ", short " << stats.removed_short << ", rare labels "
            << stats.removed_rare_label << ")\n"
            << "wrote " << cfg.paths.filtered_cases << "\n";
}

void cmd_build_vocab(const RunConfig& cfg) {
  const auto corpus = load_training_corpus(cfg);
  const Vocabulary vocab =
      build_vocab(corpus.cases, corpus.catalog,
                  static_cast<std::size_t>(cfg.corpus.max_vocab),
                  cfg.corpus.max_seq_len);
  save_vocabulary(vocab, cfg.paths.vocab);
  std::cout << "vocabulary of " << vocab.size() << " tokens -> " << cfg.paths.vocab
            << "\n";
}

void cmd_embed(const RunConfig& cfg) {
  const auto corpus = load_training_corpus(cfg);
  const Vocabulary vocab = load_vocabulary(cfg.paths.vocab);
  const EncoderModel model = load_or_init_encoder(cfg, vocab);
  const CorpusIndex index =
      embed_corpus(model, corpus.cases, vocab, cfg.run.workers);
  write_index(index, cfg.paths.embeddings, cfg.paths.sidecar);
  std::cout << "embedded " << index.size() << " cases (dim " << index.matrix.dim
            << ") -> " << cfg.paths.embeddings << "\n";
}

void cmd_mine_lcc(const RunConfig& cfg) {
  const CorpusIndex index = read_index(cfg.paths.embeddings, cfg.paths.sidecar);
  const MineLccResult result =
      mine_lcc_pools(index, cfg.miner.pool_size, cfg.run.seed, cfg.run.workers);
  write_lcc_pools(cfg.paths.lcc_pools, result.pools);
  std::size_t backfilled = 0;
  for (const auto& p : result.pools) backfilled += p.backfilled ? 1 : 0;
  std::cout << "mined " << result.pools.size() << " retrieval pools ("
            << backfilled << " backfilled) -> " << cfg.paths.lcc_pools << "\n";
  if (!result.skipped.empty()) {
    std::cout << result.skipped.size() << " anchors skipped (no same-label positive):";
    for (std::size_t i = 0; i < result.skipped.size() && i < 5; ++i)
      std::cout << " " << result.skipped[i];
    std::cout << (result.skipped.size() > 5 ? " ...\n" : "\n");
  }
}

void cmd_mine_ldm(const RunConfig& cfg) {
  const auto corpus = load_training_corpus(cfg);
  const Vocabulary vocab = load_vocabulary(cfg.paths.vocab);
  const EncoderModel encoder = load_or_init_encoder(cfg, vocab);
  FinetuneConfig clf_cfg;
  clf_cfg.epochs = cfg.miner.clf_epochs;
  clf_cfg.learning_rate = cfg.miner.clf_learning_rate;
  clf_cfg.batch_size = cfg.miner.clf_batch_size;
  clf_cfg.seed = cfg.run.seed;
  const MinerClassifier clf = train_miner_classifier(
      encoder, corpus.cases, corpus.catalog, vocab, clf_cfg);
  const auto pools = mine_ldm_pools(clf, corpus.cases, vocab,
                                    cfg.miner.label_negatives, cfg.run.workers);
  write_ldm_pools(cfg.paths.ldm_pools, pools);
  std::cout << "mined " << pools.size() << " decision pools -> "
            << cfg.paths.ldm_pools << "\n";
}

void cmd_pretrain(const RunConfig& cfg) {
  const auto corpus = load_training_corpus(cfg);
  const Vocabulary vocab = load_vocabulary(cfg.paths.vocab);
  EncoderModel model = load_or_init_encoder(cfg, vocab);

  std::unordered_map<std::string, LabelPair> labels;
  for (const auto& c : corpus.cases)
    labels[c.case_id] = {c.article_id, c.charge_id};
  const auto lcc = read_lcc_pools(cfg.paths.lcc_pools);
  const auto ldm =
      read_ldm_pools(cfg.paths.ldm_pools, [&](const std::string& id) {
        auto it = labels.find(id);
        if (it == labels.end())
          throw ValidationError("pool references unknown case: " + id);
        return it->second;
      });

  PretrainData data;
  data.cases = corpus.cases;
  data.catalog = &corpus.catalog;
  data.vocab = &vocab;
  data.lcc_pools = lcc;
  data.ldm_pools = ldm;
  data.decision_template = cfg.decision_template;

  PretrainConfig pc = cfg.pretrain;
  pc.seed = cfg.run.seed;
  pc.workers = cfg.run.workers;

  Pretrainer trainer(model, data, pc);
  if (trainer.skipped_cases())
    std::cout << trainer.skipped_cases() << " cases lack pool coverage and sit out\n";
  const PretrainStats stats = trainer.run(cfg.paths.run_dir);
  for (std::size_t e = 0; e < stats.epoch_mean_loss.size(); ++e)
    std::cout << "epoch " << (e + 1) << ": mean loss "
              << io::fmt_double(stats.epoch_mean_loss[e]) << "\n";
  if (stats.collapsed)
    std::cout << stats.collapsed << " duplicate negatives collapsed\n";
  std::cout << "checkpoints in " << cfg.paths.run_dir << "\n";
}

void cmd_finetune(const RunConfig& cfg) {
  const auto corpus = load_training_corpus(cfg);
  const Vocabulary vocab = load_vocabulary(cfg.paths.vocab);
  EncoderModel model = load_or_init_encoder(cfg, vocab);
  const FinetuneConfig fc = finetune_config(cfg);
  auto heads = init_heads(model, corpus.catalog, fc.tasks, cfg.run.seed);
  const FinetuneResult result = finetune(model, heads, corpus.cases, vocab, fc);
  attach_heads(model, heads);
  save_checkpoint(model, cfg.paths.model);
  for (std::size_t e = 0; e < result.epoch_mean_loss.size(); ++e)
    std::cout << "epoch " << (e + 1) << ": mean loss "
              << io::fmt_double(result.epoch_mean_loss[e]) << "\n";
  std::cout << "model -> " << cfg.paths.model << "\n";
}

void cmd_predict(const RunConfig& cfg) {
  const auto corpus = load_training_corpus(cfg);
  const Vocabulary vocab = load_vocabulary(cfg.paths.vocab);
  const EncoderModel model = load_checkpoint(cfg.paths.model);
  const auto heads = extract_heads(model);
  if (heads.empty())
    throw ValidationError(cfg.paths.model + " has no classification heads");
  std::string csv = "case_id,task,label,probability\n";
  for (const auto& c : corpus.cases) {
    const auto preds = predict(model, heads, c, vocab);
    for (const auto& [task, pred] : preds) {
      double best = 0.0;
      for (double p : pred.probs) best = std::max(best, p);
      csv += c.case_id + "," + task_name(task) + "," +
             std::to_string(pred.label_id) + "," + io::fmt_double(best) + "\n";
    }
  }
  io::write_file_atomic(cfg.paths.predictions, csv);
  std::cout << corpus.cases.size() << " cases -> " << cfg.paths.predictions << "\n";
}

std::vector<int> read_label_file(const std::string& path) {
  std::stringstream ss(io::read_file(path));
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string t = config_detail::trim(line);
    if (t.empty()) continue;
    try {
      labels.push_back(std::stoi(t));
    } catch (const std::exception&) {
      throw ValidationError(path + ":" + std::to_string(lineno) +
                            ": expected an integer label");
    }
  }
  return labels;
}

void write_report(const RunConfig& cfg, const std::string& task,
                  const TaskReport& report) {
  const auto path = fs::path(cfg.paths.reports_dir) / ("report-" + task + ".json");
  io::write_file_atomic(path, report_to_json(task, report).dump(2) + "\n");
  std::cout << task << ": acc " << io::fmt_double(report.acc) << ", f1 "
            << io::fmt_double(report.f1) << " -> " << path.string() << "\n";
}

void cmd_eval(const RunConfig& cfg) {
  if (!cfg.paths.gold.empty() || !cfg.paths.pred.empty()) {
    if (cfg.paths.gold.empty() || cfg.paths.pred.empty())
      throw ValidationError("fixture mode needs both paths.gold and paths.pred");
    const auto gold = read_label_file(cfg.paths.gold);
    const auto pred = read_label_file(cfg.paths.pred);
    int num_classes = 0;
    for (int v : gold) num_classes = std::max(num_classes, v + 1);
    for (int v : pred) num_classes = std::max(num_classes, v + 1);
    const TaskReport report =
        macro_metrics(gold, pred, num_classes, cfg.eval.macro_all_classes);
    write_report(cfg, cfg.eval.fixture_task, report);
    return;
  }

  const auto corpus = load_training_corpus(cfg);
  const Vocabulary vocab = load_vocabulary(cfg.paths.vocab);
  const EncoderModel model = load_checkpoint(cfg.paths.model);
  const auto heads = extract_heads(model);
  if (heads.empty())
    throw ValidationError(cfg.paths.model + " has no classification heads");
  for (const auto& head : heads) {
    std::vector<int> gold(corpus.cases.size()), pred(corpus.cases.size());
    parallel_for(corpus.cases.size(), cfg.run.workers, [&](std::size_t i) {
      const auto h =
          encode(model, tokenize(corpus.cases[i].fact_text, vocab), Head::kFact);
      gold[i] = head.dense_index(gold_label(corpus.cases[i], head.task));
      pred[i] = head.dense_index(predict_one(head, h).label_id);
    });
    TaskReport report =
        macro_metrics(gold, pred, head.classes(), cfg.eval.macro_all_classes);
    relabel_report(report, head.label_ids);
    write_report(cfg, task_name(head.task), report);
  }
}

void cmd_entropy(const RunConfig& cfg) {
  const auto corpus = load_training_corpus(cfg);
  const Vocabulary vocab = load_vocabulary(cfg.paths.vocab);
  const EncoderModel model = load_checkpoint(cfg.paths.model);
  const auto heads = extract_heads(model);
  const Task task = parse_task(cfg.eval.entropy_task);
  const ClassifierHead* head = nullptr;
  for (const auto& h : heads)
    if (h.task == task) head = &h;
  if (!head)
    throw ValidationError(cfg.paths.model + " has no " + cfg.eval.entropy_task +
                          " head");

  const auto probs =
      gold_probabilities(model, *head, corpus.cases, vocab, cfg.run.workers);
  const EntropyReport report = entropy_report(probs, cfg.eval.entropy_bins);

  std::string csv = "case_id,entropy\n";
  for (std::size_t i = 0; i < corpus.cases.size(); ++i)
    csv += corpus.cases[i].case_id + "," + io::fmt_double(report.values[i]) + "\n";
  const auto dir = fs::path(cfg.paths.reports_dir);
  io::write_file_atomic(dir / ("entropy-" + cfg.eval.entropy_task + ".csv"), csv);

  nlohmann::json summary = {{"task", cfg.eval.entropy_task},
                            {"mean", report.mean},
                            {"min", report.min},
                            {"max", report.max},
                            {"quantiles", report.quantiles},
                            {"bin_width", report.bin_width},
                            {"histogram", report.histogram}};
  io::write_file_atomic(dir / ("entropy-" + cfg.eval.entropy_task + ".json"),
                        summary.dump(2) + "\n");
  std::cout << "mean prediction cross-entropy " << io::fmt_double(report.mean)
            << " over " << report.values.size() << " cases\n";
}

void cmd_dbi(const RunConfig& cfg) {
  const CorpusIndex index = read_index(cfg.paths.embeddings, cfg.paths.sidecar);
  std::vector<int> charge_labels;
  charge_labels.reserve(index.size());
  for (const auto& l : index.labels) charge_labels.push_back(l.charge_id);

  std::vector<int> selected = cfg.eval.dbi_charges;
  if (selected.empty()) {
    const std::set<int> distinct(charge_labels.begin(), charge_labels.end());
    selected.assign(distinct.begin(), distinct.end());
  }

  const DbiReport report = dbi(index.matrix, charge_labels, selected);
  nlohmann::json out = {{"charges", dbi_to_json(report)}};

  if (!cfg.paths.baseline_embeddings.empty() ||
      !cfg.paths.baseline_sidecar.empty()) {
    if (cfg.paths.baseline_embeddings.empty() || cfg.paths.baseline_sidecar.empty())
      throw ValidationError(
          "comparison needs both paths.baseline_embeddings and "
          "paths.baseline_sidecar");
    const CorpusIndex base_index =
        read_index(cfg.paths.baseline_embeddings, cfg.paths.baseline_sidecar);
    std::vector<int> base_labels;
    base_labels.reserve(base_index.size());
    for (const auto& l : base_index.labels) base_labels.push_back(l.charge_id);
    const DbiReport baseline = dbi(base_index.matrix, base_labels, selected);
    out["baseline"] = dbi_to_json(baseline);
    nlohmann::json deltas = nlohmann::json::array();
    for (const auto& [charge, delta] : dbi_reduction(baseline, report))
      deltas.push_back({{"charge_id", charge}, {"reduction", delta}});
    out["reductions"] = deltas;
  }

  const auto path = fs::path(cfg.paths.reports_dir) / "dbi.json";
  io::write_file_atomic(path, out.dump(2) + "\n");
  for (const auto& e : report.entries)
    std::cout << "charge " << e.charge_id << ": dbi " << io::fmt_double(e.dbi)
              << "\n";
  std::cout << "-> " << path.string() << "\n";
}

void cmd_export_embeddings(const RunConfig& cfg) {
  const auto corpus = load_training_corpus(cfg);
  const Vocabulary vocab = load_vocabulary(cfg.paths.vocab);
  const EncoderModel model = load_checkpoint(cfg.paths.model);
  export_embeddings(model, corpus.cases, vocab, cfg.paths.embeddings,
                    cfg.paths.sidecar, cfg.run.workers);
  std::cout << corpus.cases.size() << " embeddings -> " << cfg.paths.embeddings
            << " (labels in " << cfg.paths.sidecar << ")\n";
}

void cmd_synth_data(const RunConfig& cfg) {
  SynthConfig sc = cfg.synth;
  sc.seed = cfg.run.seed;
  const SynthCorpus corpus = synth_corpus(sc);
  const auto dir = fs::path(cfg.paths.synth_dir);
  write_cases(dir / "cases.jsonl", corpus.cases);
  write_catalog(dir / "catalog.jsonl", corpus.catalog);
  std::cout << corpus.cases.size() << " cases across " << sc.clusters
            << " clusters -> " << dir.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-view contrastive pretraining for legal judgment prediction"};
  app.name("duet");

  std::string config_path;
  std::vector<std::string> overrides;
  bool reference = false;
  app.add_option("--config", config_path, "configuration file (INI sections)");
  app.add_option("--set", overrides, "override, section.key=value (repeatable)");
  app.add_flag("--config-reference", reference,
               "print every config key with its default and exit");

  const std::vector<std::pair<std::string, void (*)(const RunConfig&)>> commands = {
      {"ingest", cmd_ingest},
      {"build-vocab", cmd_build_vocab},
      {"embed", cmd_embed},
      {"mine-lcc", cmd_mine_lcc},
      {"mine-ldm", cmd_mine_ldm},
      {"pretrain", cmd_pretrain},
      {"finetune", cmd_finetune},
      {"predict", cmd_predict},
      {"eval", cmd_eval},
      {"entropy", cmd_entropy},
      {"dbi", cmd_dbi},
      {"export-embeddings", cmd_export_embeddings},
      {"synth-data", cmd_synth_data},
  };
  static const std::map<std::string, std::string> descriptions = {
      {"ingest", "load, validate and filter the raw corpus"},
      {"build-vocab", "build the token vocabulary"},
      {"embed", "embed the corpus for retrieval"},
      {"mine-lcc", "mine retrieval-based hard-negative pools"},
      {"mine-ldm", "mine classifier-based decision pools"},
      {"pretrain", "dual-view contrastive pretraining"},
      {"finetune", "train classification heads (and encoder)"},
      {"predict", "write per-case predictions"},
      {"eval", "accuracy and macro precision/recall/F1 reports"},
      {"entropy", "per-case prediction cross-entropy"},
      {"dbi", "cluster separability per charge"},
      {"export-embeddings", "write embeddings + label sidecar"},
      {"synth-data", "generate the synthetic benchmark corpus"},
  };
  // let --config/--set appear after the subcommand name as well as before it
  app.fallthrough();
  for (const auto& [name, fn] : commands)
    app.add_subcommand(name, descriptions.at(name));
  app.require_subcommand(0, 1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (reference) {
      std::cout << config_reference();
      return 0;
    }
    RunConfig config;
    if (!config_path.empty())
      apply_config_text(config, io::read_file(config_path), config_path);
    for (const auto& o : overrides) apply_override(config, o);

    for (const auto& [name, fn] : commands) {
      if (app.got_subcommand(name)) {
        fn(config);
        return 0;
      }
    }
    std::cerr << "error: no command given (try --help)\n";
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}
