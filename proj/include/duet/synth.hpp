#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "duet/common.hpp"
#include "duet/corpus.hpp"

namespace duet {

// Knobs for the generated benchmark corpus: one charge/article pair per
// cluster, facts built from a shared common vocabulary plus per-cluster
// signature words, with bleed-through from other clusters so that neighbors
// are genuinely confusable.
struct SynthConfig {
  int clusters = 6;
  int cases_per_cluster = 200;
  int common_words = 120;
  int signature_words = 40;
  int min_case_tokens = 15;
  int max_case_tokens = 40;
  double common_fraction = 0.55;
  double neighbor_fraction = 0.15;
  std::uint64_t seed = 0;

  void validate() const {
    if (clusters < 2) throw ValidationError("clusters must be >= 2");
    if (cases_per_cluster < 1)
      throw ValidationError("cases_per_cluster must be >= 1");
    if (common_words < 1 || signature_words < 12)
      throw ValidationError("word inventories too small");
    if (min_case_tokens < 1 || max_case_tokens < min_case_tokens)
      throw ValidationError("bad case length range");
    if (common_fraction < 0.0 || neighbor_fraction < 0.0 ||
        common_fraction + neighbor_fraction > 1.0)
      throw ValidationError("token mix fractions must be >= 0 and sum to <= 1");
  }
};

struct SynthCorpus {
  std::vector<LegalCase> cases;
  LabelCatalog catalog;
};

namespace detail {

inline std::string zero_padded(int value, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%0*d", width, value);
  return buf;
}

}  // namespace detail

// Deterministic per seed. Cluster c maps to article 100+c and charge c; the
// imprisonment bucket follows a per-cluster base sentence with noise.
inline SynthCorpus synth_corpus(const SynthConfig& config) {
  config.validate();
  Rng rng(mix_seed(config.seed, 0x73796e74));

  SynthCorpus out;
  auto sig = [](int cluster, int word) {
    return "s" + std::to_string(cluster) + "x" + std::to_string(word);
  };

  for (int c = 0; c < config.clusters; ++c) {
    std::string article_text = "Conduct involving";
    for (int w = 0; w < 6; ++w) article_text += " " + sig(c, w);
    article_text += " is prohibited and sentenced under this article.";
    out.catalog.articles.emplace(
        100 + c, CatalogEntry{"Article " + std::to_string(100 + c), article_text});

    std::string charge_text = "The offense of deliberately engaging in";
    for (int w = 6; w < 12; ++w) charge_text += " " + sig(c, w);
    charge_text += ".";
    out.catalog.charges.emplace(
        c, CatalogEntry{"Offense " + std::to_string(c), charge_text});
  }

  // base imprisonment months per cluster, cycled when clusters > 6
  const double bases[] = {4.0, 8.0, 18.0, 30.0, 70.0, 150.0};
  const double edges[] = {6, 9, 12, 24, 36, 60, 84, 120, 180, 240};

  int counter = 0;
  for (int c = 0; c < config.clusters; ++c) {
    for (int k = 0; k < config.cases_per_cluster; ++k) {
      LegalCase lc;
      lc.case_id = "case-" + detail::zero_padded(counter++, 6);
      lc.article_id = 100 + c;
      lc.charge_id = c;

      const double base = bases[c % 6];
      const double months = base * (0.6 + 0.8 * rng.uniform());
      lc.term_id = bucket_term_months(months, edges);

      const int len = config.min_case_tokens +
                      static_cast<int>(rng.index(static_cast<std::size_t>(
                          config.max_case_tokens - config.min_case_tokens + 1)));
      std::string text;
      for (int t = 0; t < len; ++t) {
        if (t) text += ' ';
        const double u = rng.uniform();
        if (u < config.common_fraction) {
          text += "w" + std::to_string(rng.index(
                            static_cast<std::size_t>(config.common_words)));
        } else {
          int cluster = c;
          if (u < config.common_fraction + config.neighbor_fraction) {
            const auto other = rng.index(static_cast<std::size_t>(config.clusters - 1));
            cluster = (c + 1 + static_cast<int>(other)) % config.clusters;
          }
          text += sig(cluster, static_cast<int>(rng.index(
                                   static_cast<std::size_t>(config.signature_words))));
        }
      }
      lc.fact_text = std::move(text);
      out.cases.push_back(std::move(lc));
    }
  }
  return out;
}

}  // namespace duet
