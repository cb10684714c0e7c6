#pragma once

#include <string>
#include <string_view>

#include "duet/common.hpp"
#include "duet/corpus.hpp"

namespace duet {

// Canonical rendering of a (law article, charge) pair into decision text.
// Placeholders: {article_name} {article_content} {charge_definition}
// {charge_name}. Overridable via the decision_template config key.
inline constexpr std::string_view kDecisionTemplate =
    "{article_name}. {article_content} {charge_definition} Charge: {charge_name}.";

struct LegalDecision {
  int article_id = 0;
  int charge_id = 0;
  std::string text;
};

inline std::string render_template(std::string_view tmpl,
                                   const CatalogEntry& article,
                                   const CatalogEntry& charge) {
  std::string out;
  out.reserve(tmpl.size() + article.name.size() + article.text.size() +
              charge.name.size() + charge.text.size());
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const std::size_t open = tmpl.find('{', pos);
    if (open == std::string_view::npos) {
      out += tmpl.substr(pos);
      break;
    }
    out += tmpl.substr(pos, open - pos);
    const std::size_t close = tmpl.find('}', open);
    if (close == std::string_view::npos)
      throw ValidationError("decision_template has an unterminated placeholder");
    const std::string_view key = tmpl.substr(open + 1, close - open - 1);
    if (key == "article_name") out += article.name;
    else if (key == "article_content") out += article.text;
    else if (key == "charge_definition") out += charge.text;
    else if (key == "charge_name") out += charge.name;
    else throw ValidationError("decision_template has unknown placeholder {" +
                               std::string(key) + "}");
    pos = close + 1;
  }
  return out;
}

inline LegalDecision render_decision(int article_id, int charge_id,
                                     const LabelCatalog& catalog,
                                     std::string_view tmpl = kDecisionTemplate) {
  auto ait = catalog.articles.find(article_id);
  if (ait == catalog.articles.end())
    throw ValidationError("unknown article id: " + std::to_string(article_id));
  auto cit = catalog.charges.find(charge_id);
  if (cit == catalog.charges.end())
    throw ValidationError("unknown charge id: " + std::to_string(charge_id));
  return LegalDecision{article_id, charge_id,
                       render_template(tmpl, ait->second, cit->second)};
}

}  // namespace duet
