#include "duet/eval.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "testutil.hpp"

namespace {

// --- macro metrics ---------------------------------------------------------------

TEST(MacroMetrics, HandWorkedExample) {
  // gold [0,0,1,1], pred [0,1,1,1]:
  //   class 0: TP=1 FP=0 FN=1 -> P=1, R=1/2, F1=2/3
  //   class 1: TP=2 FP=1 FN=0 -> P=2/3, R=1, F1=4/5
  // acc = 3/4, MP = 5/6, MR = 3/4, macro F1 = (2/3 + 4/5)/2 = 11/15
  const std::vector<int> gold = {0, 0, 1, 1};
  const std::vector<int> pred = {0, 1, 1, 1};
  const auto report = duet::macro_metrics(gold, pred, 2);
  EXPECT_NEAR(report.acc, 0.75, 1e-15);
  EXPECT_NEAR(report.mp, 5.0 / 6.0, 1e-15);
  EXPECT_NEAR(report.mr, 0.75, 1e-15);
  EXPECT_NEAR(report.f1, 11.0 / 15.0, 1e-15);
  EXPECT_EQ(report.total, 4u);
  ASSERT_EQ(report.per_class.size(), 2u);
  EXPECT_NEAR(report.per_class[0].precision, 1.0, 1e-15);
  EXPECT_NEAR(report.per_class[0].recall, 0.5, 1e-15);
  EXPECT_NEAR(report.per_class[0].f1, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(report.per_class[0].support, 2u);
  EXPECT_NEAR(report.per_class[1].precision, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(report.per_class[1].recall, 1.0, 1e-15);
  EXPECT_NEAR(report.per_class[1].f1, 0.8, 1e-15);
}

TEST(MacroMetrics, PerfectAndWorstCase) {
  const std::vector<int> gold = {0, 1, 2, 0};
  const auto perfect = duet::macro_metrics(gold, gold, 3);
  EXPECT_EQ(perfect.acc, 1.0);
  EXPECT_EQ(perfect.f1, 1.0);
  const std::vector<int> wrong = {1, 2, 0, 1};
  const auto worst = duet::macro_metrics(gold, wrong, 3);
  EXPECT_EQ(worst.acc, 0.0);
  EXPECT_EQ(worst.f1, 0.0);
}

TEST(MacroMetrics, UndefinedRatiosScoreZero) {
  // class 2 never predicted (P undefined -> 0 contribution via its absence
  // in predictions); class 1 predicted but never gold (absent from macro
  // unless widened)
  const std::vector<int> gold = {0, 0, 2};
  const std::vector<int> pred = {0, 1, 0};
  const auto report = duet::macro_metrics(gold, pred, 3);
  // gold-present classes: 0 and 2
  ASSERT_EQ(report.per_class.size(), 2u);
  EXPECT_EQ(report.per_class[0].label, 0);
  EXPECT_EQ(report.per_class[1].label, 2);
  EXPECT_NEAR(report.per_class[1].precision, 0.0, 1e-15);  // never predicted
  EXPECT_NEAR(report.per_class[1].recall, 0.0, 1e-15);
  EXPECT_NEAR(report.per_class[1].f1, 0.0, 1e-15);  // 0/0 harmonic -> 0
}

TEST(MacroMetrics, AbsentClassesOnlyCountWhenAsked) {
  const std::vector<int> gold = {0, 0, 1};
  const std::vector<int> pred = {0, 0, 1};
  const auto narrow = duet::macro_metrics(gold, pred, 5, false);
  EXPECT_EQ(narrow.per_class.size(), 2u);
  EXPECT_NEAR(narrow.f1, 1.0, 1e-15);
  const auto wide = duet::macro_metrics(gold, pred, 5, true);
  EXPECT_EQ(wide.per_class.size(), 5u);
  EXPECT_NEAR(wide.f1, 2.0 / 5.0, 1e-15);  // three empty classes score 0
}

TEST(MacroMetrics, AgreesWithConfusionMatrixOracle) {
  duet::Rng rng(808);
  for (int trial = 0; trial < 30; ++trial) {
    const int num_classes = 2 + static_cast<int>(rng.index(8));
    const std::size_t n = 20 + rng.index(80);
    std::vector<int> gold(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      gold[i] = static_cast<int>(rng.index(num_classes));
      pred[i] = static_cast<int>(rng.index(num_classes));
    }
    for (bool widen : {false, true}) {
      const auto report = duet::macro_metrics(gold, pred, num_classes, widen);
      const auto expected =
          oracles::confusion_macro(gold, pred, num_classes, widen);
      EXPECT_LT(oracles::rel_err(report.acc, expected.acc), 1e-9);
      EXPECT_LT(oracles::rel_err(report.mp, expected.mp), 1e-9);
      EXPECT_LT(oracles::rel_err(report.mr, expected.mr), 1e-9);
      EXPECT_LT(oracles::rel_err(report.f1, expected.f1), 1e-9);
    }
  }
}

TEST(MacroMetrics, InputValidation) {
  const std::vector<int> gold = {0, 1};
  const std::vector<int> short_pred = {0};
  EXPECT_THROW(duet::macro_metrics(gold, short_pred, 2), duet::ValidationError);
  const std::vector<int> none;
  EXPECT_THROW(duet::macro_metrics(none, none, 2), duet::ValidationError);
  const std::vector<int> out = {0, 5};
  EXPECT_THROW(duet::macro_metrics(gold, out, 2), duet::ValidationError);
  const std::vector<int> neg = {0, -1};
  EXPECT_THROW(duet::macro_metrics(neg, gold, 2), duet::ValidationError);
}

TEST(RelabelReport, MapsDenseIndicesBackToCatalogIds) {
  const std::vector<int> gold = {0, 1, 1};
  const std::vector<int> pred = {0, 1, 0};
  auto report = duet::macro_metrics(gold, pred, 2);
  const std::vector<int> label_ids = {234, 264};
  duet::relabel_report(report, label_ids);
  EXPECT_EQ(report.per_class[0].label, 234);
  EXPECT_EQ(report.per_class[1].label, 264);
}

TEST(ReportToJson, CarriesEveryField) {
  const std::vector<int> gold = {0, 0, 1, 1};
  const std::vector<int> pred = {0, 1, 1, 1};
  const auto report = duet::macro_metrics(gold, pred, 2);
  const auto obj = duet::report_to_json("charges", report);
  EXPECT_EQ(obj["task"], "charges");
  EXPECT_NEAR(obj["acc"].get<double>(), 0.75, 1e-15);
  EXPECT_NEAR(obj["f1"].get<double>(), 11.0 / 15.0, 1e-15);
  EXPECT_EQ(obj["total"].get<std::size_t>(), 4u);
  ASSERT_EQ(obj["per_class"].size(), 2u);
  EXPECT_EQ(obj["per_class"][1]["support"].get<std::size_t>(), 2u);
}

// --- prediction entropy -------------------------------------------------------------

TEST(EntropyReport, PointValuesAndSummary) {
  // -ln p for p = 1, 1/e, 1/e^2
  const std::vector<double> probs = {1.0, std::exp(-1.0), std::exp(-2.0)};
  const auto report = duet::entropy_report(probs, 4);
  ASSERT_EQ(report.values.size(), 3u);
  EXPECT_NEAR(report.values[0], 0.0, 1e-12);
  EXPECT_NEAR(report.values[1], 1.0, 1e-12);
  EXPECT_NEAR(report.values[2], 2.0, 1e-12);
  EXPECT_NEAR(report.mean, 1.0, 1e-12);
  EXPECT_NEAR(report.min, 0.0, 1e-12);
  EXPECT_NEAR(report.max, 2.0, 1e-12);
  // nearest-rank quantiles over the sorted values {0, 1, 2}
  ASSERT_EQ(report.quantiles.size(), 3u);
  EXPECT_NEAR(report.quantiles[0], 0.0, 1e-12);  // p25 -> rank ceil(0.75)=1
  EXPECT_NEAR(report.quantiles[1], 1.0, 1e-12);  // p50 -> rank 2
  EXPECT_NEAR(report.quantiles[2], 2.0, 1e-12);  // p75 -> rank 3
  // histogram: bin width 0.5 over [0, 2]; values fall in bins 0, 2, 3
  ASSERT_EQ(report.histogram.size(), 4u);
  EXPECT_EQ(report.histogram[0], 1u);
  EXPECT_EQ(report.histogram[1], 0u);
  EXPECT_EQ(report.histogram[2], 1u);
  EXPECT_EQ(report.histogram[3], 1u);
  EXPECT_NEAR(report.bin_width, 0.5, 1e-12);
}

TEST(EntropyReport, TinyProbabilitiesAreClamped) {
  const std::vector<double> probs = {0.0, 1e-310};
  const auto report = duet::entropy_report(probs);
  for (double e : report.values) {
    EXPECT_TRUE(std::isfinite(e));
    EXPECT_NEAR(e, -std::log(1e-300), 1e-6);
  }
}

TEST(EntropyReport, AllCertainGivesDegenerateHistogram) {
  const std::vector<double> probs = {1.0, 1.0, 1.0};
  const auto report = duet::entropy_report(probs, 50);
  EXPECT_EQ(report.max, 0.0);
  EXPECT_EQ(report.bin_width, 1.0);  // fallback width for an all-zero spread
  EXPECT_EQ(report.histogram[0], 3u);
}

TEST(EntropyReport, HistogramCountsEveryExample) {
  duet::Rng rng(606);
  std::vector<double> probs(500);
  for (auto& p : probs) p = rng.uniform(0.001, 1.0);
  const auto report = duet::entropy_report(probs, 50);
  std::size_t total = 0;
  for (auto c : report.histogram) total += c;
  EXPECT_EQ(total, 500u);
  ASSERT_EQ(report.histogram.size(), 50u);
  EXPECT_NEAR(report.bin_width * 50, report.max, 1e-9);
}

TEST(EntropyReport, NearestRankQuantilesOnEvenCount) {
  // sorted values {1, 2, 3, 4}: p25 -> rank 1, p50 -> rank 2, p75 -> rank 3
  const std::vector<double> probs = {std::exp(-1.0), std::exp(-2.0),
                                     std::exp(-3.0), std::exp(-4.0)};
  const auto report = duet::entropy_report(probs);
  EXPECT_NEAR(report.quantiles[0], 1.0, 1e-12);
  EXPECT_NEAR(report.quantiles[1], 2.0, 1e-12);
  EXPECT_NEAR(report.quantiles[2], 3.0, 1e-12);
}

TEST(EntropyReport, BadInputsThrow) {
  const std::vector<double> none;
  EXPECT_THROW(duet::entropy_report(none), duet::ValidationError);
  const std::vector<double> bad = {0.5, 1.5};
  EXPECT_THROW(duet::entropy_report(bad), duet::ValidationError);
  const std::vector<double> neg = {0.5, -0.1};
  EXPECT_THROW(duet::entropy_report(neg), duet::ValidationError);
  const std::vector<double> ok = {0.5};
  EXPECT_THROW(duet::entropy_report(ok, 0), duet::ValidationError);
}

TEST(GoldProbabilities, MatchesDirectComputation) {
  duet::LabelCatalog catalog;
  catalog.articles[1] = {"Article 1", "first statute"};
  catalog.articles[2] = {"Article 2", "second statute"};
  catalog.charges[1] = {"First", "first offense"};
  catalog.charges[2] = {"Second", "second offense"};
  std::vector<duet::LegalCase> cases = {
      {"a", "some stolen goods", 1, 1, 0},
      {"b", "a violent brawl", 2, 2, 1},
      {"c", "more stolen goods", 1, 1, 0},
  };
  const auto vocab = duet::build_vocab(cases, catalog, 1000, 32);
  duet::EncoderConfig config;
  config.vocab_size = vocab.size();
  config.embed_dim = 4;
  config.proj_dim = 3;
  config.seed = 5;
  const auto model = duet::init_params(config);
  const auto heads = duet::init_heads(
      model, catalog, std::vector<duet::Task>{duet::Task::kArticles}, 5);

  const auto probs = duet::gold_probabilities(model, heads[0], cases, vocab, 2);
  ASSERT_EQ(probs.size(), 3u);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto h = duet::encode(
        model, duet::tokenize(cases[i].fact_text, vocab), duet::Head::kFact);
    const auto p = duet::softmax(duet::head_logits(heads[0], h));
    const int gold = heads[0].dense_index(cases[i].article_id);
    EXPECT_EQ(probs[i], p[static_cast<std::size_t>(gold)]);
  }
}

// --- cluster separability -------------------------------------------------------------

duet::io::Matrix matrix_of(const std::vector<std::vector<float>>& rows) {
  duet::io::Matrix m;
  m.rows = static_cast<std::uint32_t>(rows.size());
  m.dim = static_cast<std::uint32_t>(rows.front().size());
  for (const auto& r : rows) m.data.insert(m.data.end(), r.begin(), r.end());
  return m;
}

TEST(Dbi, HandWorkedExample) {
  // cluster 7 at {(0,0), (0,2)}: centroid (0,1), S = 1
  // cluster 8 at {(10,0), (10,2)}: centroid (10,1), S = 1
  // M = 10, DBI_i = (1+1)/10 = 0.2 for both
  const auto m = matrix_of({{0.0f, 0.0f}, {0.0f, 2.0f}, {10.0f, 0.0f},
                            {10.0f, 2.0f}});
  const std::vector<int> labels = {7, 7, 8, 8};
  const std::vector<int> selected = {7, 8};
  const auto report = duet::dbi(m, labels, selected);
  ASSERT_EQ(report.entries.size(), 2u);
  EXPECT_EQ(report.entries[0].charge_id, 7);
  EXPECT_NEAR(report.entries[0].s, 1.0, 1e-12);
  EXPECT_NEAR(report.entries[1].s, 1.0, 1e-12);
  EXPECT_NEAR(report.m[0][1], 10.0, 1e-12);
  EXPECT_NEAR(report.entries[0].dbi, 0.2, 1e-12);
  EXPECT_NEAR(report.entries[1].dbi, 0.2, 1e-12);
  EXPECT_NEAR(report.entries[0].centroid[0], 0.0, 1e-12);
  EXPECT_NEAR(report.entries[0].centroid[1], 1.0, 1e-12);
}

TEST(Dbi, WorstNeighborWins) {
  // three clusters on a line; the middle one must report its nearer,
  // more-overlapping neighbor
  const auto m = matrix_of({{0.0f, 0.0f}, {0.0f, 2.0f},      // charge 1
                            {4.0f, 0.0f}, {4.0f, 2.0f},      // charge 2 (near 1)
                            {100.0f, 0.0f}, {100.0f, 2.0f}});  // charge 3 (far)
  const std::vector<int> labels = {1, 1, 2, 2, 3, 3};
  const std::vector<int> selected = {1, 2, 3};
  const auto report = duet::dbi(m, labels, selected);
  // S = 1 everywhere; for charge 2: max((1+1)/4, (1+1)/96) = 0.5
  EXPECT_NEAR(report.entries[1].dbi, 0.5, 1e-12);
  // charge 3 is far from both: max((1+1)/100, (1+1)/96)
  EXPECT_NEAR(report.entries[2].dbi, 2.0 / 96.0, 1e-12);
}

TEST(Dbi, SelectionOrderIsPreservedAndSubsettingWorks) {
  const auto m = matrix_of({{0.0f, 0.0f}, {5.0f, 0.0f}, {10.0f, 0.0f},
                            {0.0f, 1.0f}, {5.0f, 1.0f}, {10.0f, 1.0f}});
  const std::vector<int> labels = {1, 2, 3, 1, 2, 3};
  const std::vector<int> order_a = {3, 1};
  const auto report = duet::dbi(m, labels, order_a);
  ASSERT_EQ(report.entries.size(), 2u);
  EXPECT_EQ(report.entries[0].charge_id, 3);
  EXPECT_EQ(report.entries[1].charge_id, 1);
  // subset {1, 3} ignores charge 2 entirely: M = 10
  EXPECT_NEAR(report.m[0][1], 10.0, 1e-12);
}

TEST(Dbi, AgreesWithDirectOracle) {
  duet::Rng rng(1234);
  const std::size_t n = 90, dim = 4;
  std::vector<std::vector<float>> rows;
  std::vector<std::vector<double>> rows_d;
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) {
    const int cluster = static_cast<int>(i % 3);
    std::vector<float> r(dim);
    for (std::size_t d = 0; d < dim; ++d)
      r[d] = static_cast<float>(3.0 * cluster + rng.uniform(-1.0, 1.0));
    rows.push_back(r);
    rows_d.emplace_back(r.begin(), r.end());
    labels.push_back(20 + cluster);
  }
  const std::vector<int> selected = {20, 21, 22};
  const auto report = duet::dbi(matrix_of(rows), labels, selected);
  const auto expected = oracles::direct_dbi(rows_d, labels, selected);
  ASSERT_EQ(report.entries.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i)
    EXPECT_LT(oracles::rel_err(report.entries[i].dbi, expected[i]), 1e-9);
}

TEST(Dbi, TighterClustersScoreLower) {
  auto build = [&](double spread) {
    std::vector<std::vector<float>> rows;
    std::vector<int> labels;
    duet::Rng local(99);
    for (std::size_t i = 0; i < 60; ++i) {
      const int cluster = static_cast<int>(i % 2);
      std::vector<float> r(3);
      for (auto& v : r)
        v = static_cast<float>(5.0 * cluster + spread * local.uniform(-1.0, 1.0));
      rows.push_back(r);
      labels.push_back(cluster);
    }
    const std::vector<int> selected = {0, 1};
    return duet::dbi(matrix_of(rows), labels, selected).entries[0].dbi;
  };
  EXPECT_LT(build(0.5), build(2.0));
}

TEST(Dbi, InputValidation) {
  const auto m = matrix_of({{0.0f, 0.0f}, {1.0f, 0.0f}});
  const std::vector<int> labels = {1, 2};
  const std::vector<int> short_labels = {1};
  EXPECT_THROW(duet::dbi(m, short_labels, std::vector<int>{1, 2}),
               duet::ValidationError);
  EXPECT_THROW(duet::dbi(m, labels, std::vector<int>{1}), duet::ValidationError);
  EXPECT_THROW(duet::dbi(m, labels, std::vector<int>{1, 1}), duet::ValidationError);
  EXPECT_THROW(duet::dbi(m, labels, std::vector<int>{1, 9}), duet::ValidationError);
  // coincident centroids
  const auto same = matrix_of({{1.0f, 1.0f}, {1.0f, 1.0f}});
  EXPECT_THROW(duet::dbi(same, labels, std::vector<int>{1, 2}),
               duet::ValidationError);
}

TEST(DbiReduction, PositiveWhenCandidateTightens) {
  const auto loose = matrix_of({{0.0f, 0.0f}, {0.0f, 4.0f}, {10.0f, 0.0f},
                                {10.0f, 4.0f}});
  const auto tight = matrix_of({{0.0f, 0.0f}, {0.0f, 1.0f}, {10.0f, 0.0f},
                                {10.0f, 1.0f}});
  const std::vector<int> labels = {5, 5, 6, 6};
  const std::vector<int> selected = {5, 6};
  const auto base = duet::dbi(loose, labels, selected);
  const auto cand = duet::dbi(tight, labels, selected);
  const auto deltas = duet::dbi_reduction(base, cand);
  ASSERT_EQ(deltas.size(), 2u);
  for (const auto& [charge, delta] : deltas) {
    EXPECT_GT(delta, 0.0) << "charge " << charge;
  }
  EXPECT_EQ(deltas[0].first, 5);

  auto other = cand;
  other.entries[0].charge_id = 99;
  EXPECT_THROW(duet::dbi_reduction(base, other), duet::ValidationError);
}

// --- embedding export ----------------------------------------------------------------

TEST(ExportEmbeddings, WritesLoadableMatrixAndSidecar) {
  duet::LabelCatalog catalog;
  catalog.articles[1] = {"Article 1", "first statute"};
  catalog.charges[1] = {"First", "first offense"};
  std::vector<duet::LegalCase> cases;
  for (int i = 0; i < 50; ++i)
    cases.push_back({"case-" + std::to_string(i),
                     "fact number " + std::to_string(i) + " with words", 1, 1, 0});
  const auto vocab = duet::build_vocab(cases, catalog, 1000, 32);
  duet::EncoderConfig config;
  config.vocab_size = vocab.size();
  config.embed_dim = 4;
  config.proj_dim = 3;
  config.seed = 77;
  const auto model = duet::init_params(config);

  testutil::TempDir dir;
  duet::export_embeddings(model, cases, vocab, dir / "emb.bin", dir / "emb.csv", 2);
  const auto index = duet::read_index(dir / "emb.bin", dir / "emb.csv");
  EXPECT_EQ(index.size(), 50u);
  EXPECT_EQ(index.matrix.dim, 3u);
  // sidecar has one row per case, aligned with the matrix
  const auto csv = testutil::read_text(dir / "emb.csv");
  std::size_t lines = 0;
  for (char ch : csv) lines += ch == '\n';
  EXPECT_EQ(lines, 50u);
  EXPECT_EQ(csv.rfind("case-0,1,1\n", 0), 0u);
  const auto direct = duet::embed_corpus(model, cases, vocab);
  EXPECT_EQ(index.matrix.data, direct.matrix.data);
}

TEST(ExportEmbeddings, EmptyCorpusStillWritesAValidPair) {
  duet::LabelCatalog catalog;
  catalog.articles[1] = {"Article 1", "text"};
  catalog.charges[1] = {"First", "text"};
  std::vector<duet::LegalCase> cases;
  const auto vocab = duet::build_vocab(cases, catalog, 1000, 32);
  duet::EncoderConfig config;
  config.vocab_size = vocab.size();
  config.embed_dim = 4;
  config.proj_dim = 3;
  const auto model = duet::init_params(config);
  testutil::TempDir dir;
  duet::export_embeddings(model, cases, vocab, dir / "emb.bin", dir / "emb.csv");
  const auto index = duet::read_index(dir / "emb.bin", dir / "emb.csv");
  EXPECT_EQ(index.size(), 0u);
  EXPECT_EQ(index.matrix.rows, 0u);
}

}  // namespace
