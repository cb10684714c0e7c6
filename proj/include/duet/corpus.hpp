#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "duet/common.hpp"
#include "duet/io.hpp"

namespace duet {

namespace fs = std::filesystem;

inline constexpr int kTermClasses = 11;  // term-of-penalty buckets 0..10

// One criminal fact with its judgment labels.
struct LegalCase {
  std::string case_id;
  std::string fact_text;
  int article_id = 0;
  int charge_id = 0;
  int term_id = 0;
};

struct CatalogEntry {
  std::string name;
  std::string text;  // article content / charge definition
};

struct LabelCatalog {
  std::map<int, CatalogEntry> articles;
  std::map<int, CatalogEntry> charges;
};

// --- tokenization ---------------------------------------------------------

// Whitespace-delimited runs become tokens; inside a run, consecutive ASCII
// bytes group into one token and every multi-byte UTF-8 code point stands
// alone. Segmented text keeps its words, unsegmented CJK falls back to
// per-character tokens.
inline std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string ascii_run;
  auto flush = [&] {
    if (!ascii_run.empty()) {
      tokens.push_back(ascii_run);
      ascii_run.clear();
    }
  };
  for (std::size_t i = 0; i < text.size();) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (c < 0x80) {
      if (std::isspace(c)) {
        flush();
      } else {
        ascii_run.push_back(static_cast<char>(c));
      }
      ++i;
      continue;
    }
    flush();
    std::size_t len = 1;
    if ((c & 0xe0) == 0xc0) len = 2;
    else if ((c & 0xf0) == 0xe0) len = 3;
    else if ((c & 0xf8) == 0xf0) len = 4;
    len = std::min(len, text.size() - i);
    tokens.emplace_back(text.substr(i, len));
    i += len;
  }
  flush();
  return tokens;
}

struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kStart = 2;

  std::vector<std::string> tokens;  // index = id; [0..2] are the specials
  std::unordered_map<std::string, int> ids;
  int max_seq_len = 512;

  int size() const { return static_cast<int>(tokens.size()); }

  int lookup(const std::string& token) const {
    auto it = ids.find(token);
    return it == ids.end() ? kUnk : it->second;
  }
};

inline const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials = {"<pad>", "<unk>", "<s>"};
  return specials;
}

struct TokenSequence {
  std::vector<int> ids;
  int length = 0;  // non-pad count
};

// --- corpus loading --------------------------------------------------------

struct SkippedLine {
  std::size_t line;  // 1-based
  std::string reason;
};

struct CorpusLoad {
  std::vector<LegalCase> cases;
  LabelCatalog catalog;
  std::vector<SkippedLine> skipped_cases;
  std::vector<SkippedLine> skipped_catalog;

  std::size_t skipped() const {
    return skipped_cases.size() + skipped_catalog.size();
  }
};

namespace detail {

inline bool get_int(const nlohmann::json& obj, const char* key, int& out) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number_integer()) return false;
  out = it->get<int>();
  return true;
}

inline bool get_str(const nlohmann::json& obj, const char* key, std::string& out) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) return false;
  out = it->get<std::string>();
  return true;
}

}  // namespace detail

// Reads the catalog then the cases, skipping malformed lines with a reason.
// A case whose label id is missing from the catalog is a fatal error.
inline CorpusLoad load_corpus(const fs::path& cases_path,
                              const fs::path& catalog_path) {
  CorpusLoad result;

  {
    std::ifstream in(catalog_path);
    if (!in) throw ValidationError("cannot open catalog file: " + catalog_path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
      if (obj.is_discarded() || !obj.is_object()) {
        result.skipped_catalog.push_back({lineno, "invalid JSON"});
        continue;
      }
      std::string kind, name, text;
      int id = 0;
      if (!detail::get_str(obj, "kind", kind) || !detail::get_int(obj, "id", id) ||
          !detail::get_str(obj, "name", name) || !detail::get_str(obj, "text", text)) {
        result.skipped_catalog.push_back({lineno, "missing or mistyped field"});
        continue;
      }
      if (name.empty() || text.empty()) {
        result.skipped_catalog.push_back({lineno, "empty name or text"});
        continue;
      }
      auto* table = kind == "article"  ? &result.catalog.articles
                    : kind == "charge" ? &result.catalog.charges
                                       : nullptr;
      if (table == nullptr) {
        result.skipped_catalog.push_back({lineno, "unknown kind: " + kind});
        continue;
      }
      if (!table->emplace(id, CatalogEntry{name, text}).second) {
        result.skipped_catalog.push_back({lineno, "duplicate id"});
      }
    }
  }

  {
    std::ifstream in(cases_path);
    if (!in) throw ValidationError("cannot open cases file: " + cases_path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
      if (obj.is_discarded() || !obj.is_object()) {
        result.skipped_cases.push_back({lineno, "invalid JSON"});
        continue;
      }
      LegalCase c;
      if (!detail::get_str(obj, "case_id", c.case_id) ||
          !detail::get_str(obj, "fact", c.fact_text) ||
          !detail::get_int(obj, "article_id", c.article_id) ||
          !detail::get_int(obj, "charge_id", c.charge_id) ||
          !detail::get_int(obj, "term_id", c.term_id)) {
        result.skipped_cases.push_back({lineno, "missing or mistyped field"});
        continue;
      }
      if (c.case_id.empty() ||
          c.case_id.find_first_of(",\r\n") != std::string::npos) {
        result.skipped_cases.push_back({lineno, "bad case_id"});
        continue;
      }
      if (c.term_id < 0 || c.term_id >= kTermClasses) {
        result.skipped_cases.push_back({lineno, "term_id out of range"});
        continue;
      }
      if (!result.catalog.articles.count(c.article_id))
        throw ValidationError(cases_path.string() + ":" + std::to_string(lineno) +
                              ": case " + c.case_id + " references article " +
                              std::to_string(c.article_id) + " absent from catalog");
      if (!result.catalog.charges.count(c.charge_id))
        throw ValidationError(cases_path.string() + ":" + std::to_string(lineno) +
                              ": case " + c.case_id + " references charge " +
                              std::to_string(c.charge_id) + " absent from catalog");
      result.cases.push_back(std::move(c));
    }
  }
  return result;
}

inline void write_cases(const fs::path& path, std::span<const LegalCase> cases) {
  std::string out;
  for (const auto& c : cases) {
    nlohmann::json obj;
    obj["case_id"] = c.case_id;
    obj["fact"] = c.fact_text;
    obj["article_id"] = c.article_id;
    obj["charge_id"] = c.charge_id;
    obj["term_id"] = c.term_id;
    out += obj.dump();
    out += '\n';
  }
  io::write_file_atomic(path, out);
}

inline void write_catalog(const fs::path& path, const LabelCatalog& catalog) {
  std::string out;
  auto emit = [&](const char* kind, const std::map<int, CatalogEntry>& table) {
    for (const auto& [id, entry] : table) {
      nlohmann::json obj;
      obj["kind"] = kind;
      obj["id"] = id;
      obj["name"] = entry.name;
      obj["text"] = entry.text;
      out += obj.dump();
      out += '\n';
    }
  };
  emit("article", catalog.articles);
  emit("charge", catalog.charges);
  io::write_file_atomic(path, out);
}

// --- filtering --------------------------------------------------------------

struct FilterStats {
  std::size_t removed_multi_label = 0;
  std::size_t removed_short = 0;
  std::size_t removed_rare_label = 0;
  int label_filter_rounds = 0;
};

// Drops multi-label case ids, short facts, and then iterates the per-label
// minimum-count filter to a fixed point (removing one label's cases can push
// another label under the threshold).
inline std::vector<LegalCase> filter_cases(std::vector<LegalCase> cases,
                                           int min_tokens, int min_label_count,
                                           FilterStats* stats = nullptr) {
  if (min_tokens < 0 || min_label_count < 0)
    throw ValidationError("filter thresholds must be non-negative");
  FilterStats local;

  std::unordered_map<std::string, std::pair<int, int>> first_labels;
  std::unordered_set<std::string> multi;
  for (const auto& c : cases) {
    auto [it, fresh] = first_labels.emplace(c.case_id,
                                            std::make_pair(c.article_id, c.charge_id));
    if (!fresh && it->second != std::make_pair(c.article_id, c.charge_id))
      multi.insert(c.case_id);
  }
  std::vector<LegalCase> kept;
  kept.reserve(cases.size());
  std::unordered_set<std::string> seen;
  for (auto& c : cases) {
    if (multi.count(c.case_id) || !seen.insert(c.case_id).second) {
      ++local.removed_multi_label;
      continue;
    }
    kept.push_back(std::move(c));
  }

  if (min_tokens > 0) {
    std::vector<LegalCase> long_enough;
    long_enough.reserve(kept.size());
    for (auto& c : kept) {
      if (split_tokens(c.fact_text).size() <
          static_cast<std::size_t>(min_tokens)) {
        ++local.removed_short;
      } else {
        long_enough.push_back(std::move(c));
      }
    }
    kept = std::move(long_enough);
  }

  if (min_label_count > 0) {
    for (bool changed = true; changed;) {
      changed = false;
      ++local.label_filter_rounds;
      std::map<int, std::size_t> article_count, charge_count;
      for (const auto& c : kept) {
        ++article_count[c.article_id];
        ++charge_count[c.charge_id];
      }
      std::vector<LegalCase> survivors;
      survivors.reserve(kept.size());
      for (auto& c : kept) {
        if (article_count[c.article_id] < static_cast<std::size_t>(min_label_count) ||
            charge_count[c.charge_id] < static_cast<std::size_t>(min_label_count)) {
          ++local.removed_rare_label;
          changed = true;
        } else {
          survivors.push_back(std::move(c));
        }
      }
      kept = std::move(survivors);
    }
  }

  if (stats) *stats = local;
  return kept;
}

// --- vocabulary --------------------------------------------------------------

// Frequency over fact texts plus catalog texts, ties broken lexicographically.
inline Vocabulary build_vocab(std::span<const LegalCase> cases,
                              const LabelCatalog& catalog, std::size_t max_vocab,
                              int max_seq_len = 512) {
  if (max_vocab < special_tokens().size())
    throw ValidationError("max_vocab must be at least " +
                          std::to_string(special_tokens().size()));
  if (max_seq_len < 1) throw ValidationError("max_seq_len must be >= 1");

  std::map<std::string, std::size_t> freq;
  auto count = [&](std::string_view text) {
    for (auto& tok : split_tokens(text)) ++freq[tok];
  };
  for (const auto& c : cases) count(c.fact_text);
  for (const auto& [id, entry] : catalog.articles) {
    count(entry.name);
    count(entry.text);
  }
  for (const auto& [id, entry] : catalog.charges) {
    count(entry.name);
    count(entry.text);
  }

  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary vocab;
  vocab.max_seq_len = max_seq_len;
  vocab.tokens = special_tokens();
  for (const auto& [tok, n] : ranked) {
    if (vocab.tokens.size() >= max_vocab) break;
    vocab.tokens.push_back(tok);
  }
  for (std::size_t i = 0; i < vocab.tokens.size(); ++i)
    vocab.ids[vocab.tokens[i]] = static_cast<int>(i);
  return vocab;
}

// Start marker, then token ids with OOV mapped to UNK; prefix truncation.
inline TokenSequence tokenize(std::string_view text, const Vocabulary& vocab) {
  TokenSequence seq;
  seq.ids.push_back(Vocabulary::kStart);
  for (const auto& tok : split_tokens(text)) {
    if (static_cast<int>(seq.ids.size()) >= vocab.max_seq_len) break;
    seq.ids.push_back(vocab.lookup(tok));
  }
  seq.length = static_cast<int>(seq.ids.size());
  return seq;
}

inline std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
  std::string out;
  for (int id : seq.ids) {
    if (id == Vocabulary::kPad || id == Vocabulary::kStart) continue;
    if (id < 0 || id >= vocab.size())
      throw ValidationError("token id out of range: " + std::to_string(id));
    if (!out.empty()) out.push_back(' ');
    out += vocab.tokens[id];
  }
  return out;
}

inline void save_vocabulary(const Vocabulary& vocab, const fs::path& path) {
  nlohmann::json obj;
  obj["max_seq_len"] = vocab.max_seq_len;
  obj["tokens"] = vocab.tokens;
  io::write_file_atomic(path, obj.dump(2) + "\n");
}

inline Vocabulary load_vocabulary(const fs::path& path) {
  nlohmann::json obj = nlohmann::json::parse(io::read_file(path), nullptr, false);
  if (obj.is_discarded() || !obj.is_object() || !obj.contains("tokens") ||
      !obj.contains("max_seq_len"))
    throw ValidationError("invalid vocabulary file: " + path.string());
  Vocabulary vocab;
  vocab.max_seq_len = obj["max_seq_len"].get<int>();
  vocab.tokens = obj["tokens"].get<std::vector<std::string>>();
  const auto& specials = special_tokens();
  if (vocab.tokens.size() < specials.size() ||
      !std::equal(specials.begin(), specials.end(), vocab.tokens.begin()))
    throw ValidationError("vocabulary file missing special tokens: " + path.string());
  for (std::size_t i = 0; i < vocab.tokens.size(); ++i)
    vocab.ids[vocab.tokens[i]] = static_cast<int>(i);
  if (vocab.ids.size() != vocab.tokens.size())
    throw ValidationError("vocabulary file has duplicate tokens: " + path.string());
  return vocab;
}

// Months-to-bucket helper for synthetic data; edges are upper bounds.
inline int bucket_term_months(double months, std::span<const double> edges) {
  int bucket = 0;
  for (double edge : edges) {
    if (months < edge) return bucket;
    ++bucket;
  }
  return bucket;
}

}  // namespace duet
