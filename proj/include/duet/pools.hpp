#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "duet/common.hpp"
#include "duet/io.hpp"

namespace duet {

namespace fs = std::filesystem;

inline constexpr int kLccPoolSize = 15;   // retrieved hard-negative facts
inline constexpr int kLabelNegatives = 3;  // wrong articles / wrong charges

struct LabelPair {
  int article_id = 0;
  int charge_id = 0;
  auto operator<=>(const LabelPair&) const = default;
};

// Retrieval-mined neighborhood of one anchor case.
struct LccPool {
  std::string anchor_id;
  std::string positive_id;
  std::vector<std::string> negative_ids;
  bool backfilled = false;  // retrieval sweep came up short; random fill used
};

// Classifier-mined wrong labels for one anchor, with the cross-combination
// decision negatives they induce.
struct LdmPool {
  std::string anchor_id;
  std::vector<int> neg_articles;
  std::vector<int> neg_charges;
  std::vector<LabelPair> decision_negatives;  // article-major order
};

// All candidate-article x candidate-charge combinations minus the true pair:
// (n+1)^2 - 1 decisions, 15 with the default 3 wrong labels per task.
inline std::vector<LabelPair> build_decision_pool(
    LabelPair true_pair, std::span<const int> neg_articles,
    std::span<const int> neg_charges) {
  auto candidates = [&](std::span<const int> negs, int true_id,
                        const char* what) {
    std::set<int> ids(negs.begin(), negs.end());
    if (ids.size() != negs.size())
      throw ValidationError(std::string("duplicate negative ") + what);
    if (ids.count(true_id))
      throw ValidationError(std::string("true ") + what +
                            " listed among its own negatives");
    ids.insert(true_id);
    return std::vector<int>(ids.begin(), ids.end());
  };
  const auto articles = candidates(neg_articles, true_pair.article_id, "article");
  const auto charges = candidates(neg_charges, true_pair.charge_id, "charge");

  std::vector<LabelPair> pairs;
  pairs.reserve(articles.size() * charges.size() - 1);
  for (int a : articles)
    for (int c : charges)
      if (LabelPair{a, c} != true_pair) pairs.push_back({a, c});
  return pairs;
}

// --- persisted pool files (JSONL, one anchor per line) ----------------------

inline void write_lcc_pools(const fs::path& path, std::span<const LccPool> pools) {
  std::string out;
  for (const auto& p : pools) {
    nlohmann::json obj;
    obj["anchor"] = p.anchor_id;
    obj["positive"] = p.positive_id;
    obj["negatives"] = p.negative_ids;
    obj["backfilled"] = p.backfilled;
    out += obj.dump();
    out += '\n';
  }
  io::write_file_atomic(path, out);
}

inline std::vector<LccPool> read_lcc_pools(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open pool file: " + path.string());
  std::vector<LccPool> pools;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object() || !obj.contains("anchor") ||
        !obj.contains("positive") || !obj.contains("negatives") ||
        !obj.contains("backfilled"))
      throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                            ": malformed pool record");
    LccPool p;
    p.anchor_id = obj["anchor"].get<std::string>();
    p.positive_id = obj["positive"].get<std::string>();
    p.negative_ids = obj["negatives"].get<std::vector<std::string>>();
    p.backfilled = obj["backfilled"].get<bool>();
    if (p.negative_ids.empty())
      throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                            ": pool has no negatives");
    pools.push_back(std::move(p));
  }
  return pools;
}

inline void write_ldm_pools(const fs::path& path, std::span<const LdmPool> pools) {
  std::string out;
  for (const auto& p : pools) {
    nlohmann::json obj;
    obj["anchor"] = p.anchor_id;
    obj["neg_articles"] = p.neg_articles;
    obj["neg_charges"] = p.neg_charges;
    out += obj.dump();
    out += '\n';
  }
  io::write_file_atomic(path, out);
}

// Decision negatives are reconstructed from the stored wrong labels, so the
// caller must pass each anchor's true labels.
inline std::vector<LdmPool> read_ldm_pools(
    const fs::path& path,
    const std::function<LabelPair(const std::string&)>& true_labels) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open pool file: " + path.string());
  std::vector<LdmPool> pools;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object() || !obj.contains("anchor") ||
        !obj.contains("neg_articles") || !obj.contains("neg_charges"))
      throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                            ": malformed pool record");
    LdmPool p;
    p.anchor_id = obj["anchor"].get<std::string>();
    p.neg_articles = obj["neg_articles"].get<std::vector<int>>();
    p.neg_charges = obj["neg_charges"].get<std::vector<int>>();
    p.decision_negatives =
        build_decision_pool(true_labels(p.anchor_id), p.neg_articles, p.neg_charges);
    pools.push_back(std::move(p));
  }
  return pools;
}

}  // namespace duet
