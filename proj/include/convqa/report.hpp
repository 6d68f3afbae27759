#pragma once

// Report tables shaped like the usual ConvQA comparison: performance per
// method and model, unanswerable-question statistics, rankings, pairwise
// agreement with human judgments, and invalid-question tallies. Output is
// plain text plus a long-format CSV (model,method,metric,value).

#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "convqa/analytics.hpp"
#include "convqa/protocol.hpp"

namespace convqa {

struct RunRecord {
  RunSummary summary;
  std::vector<TurnEntry> entries;  // for manual invalidity labels
};

struct HumanModelStats {
  std::optional<double> accuracy;
  std::optional<double> answerable_accuracy;
  std::optional<double> unanswerable_rate;
  PassageScores passage_scores;
};

struct HumanData {
  std::map<std::string, HumanModelStats> models;
};

// {"models": {"<id>": {"accuracy", "answerable_accuracy", "unanswerable_rate",
//                      "passage_scores": {...}}}}
inline HumanData human_data_from_json(const nlohmann::json& j) {
  HumanData h;
  try {
    for (const auto& [id, m] : j.at("models").items()) {
      HumanModelStats s;
      auto opt = [&](const char* k) -> std::optional<double> {
        if (!m.contains(k) || m[k].is_null()) return std::nullopt;
        return m[k].get<double>();
      };
      s.accuracy = opt("accuracy");
      s.answerable_accuracy = opt("answerable_accuracy");
      s.unanswerable_rate = opt("unanswerable_rate");
      if (m.contains("passage_scores"))
        for (const auto& [pid, v] : m["passage_scores"].items()) s.passage_scores[pid] = v.get<double>();
      h.models[id] = std::move(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("human data: ") + e.what());
  }
  return h;
}

struct Report {
  std::string text;
  std::string csv;
};

namespace report_detail {

inline std::string fmt(std::optional<double> v, int decimals = 1) {
  if (!v) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, *v);
  return buf;
}

inline std::string pad(const std::string& s, std::size_t width) {
  // Display width: count code points so "≈" lines up.
  std::size_t w = text::codepoint_length(s);
  return w >= width ? s : s + std::string(width - w, ' ');
}

class Table {
 public:
  explicit Table(std::vector<std::string> header) { rows_.push_back(std::move(header)); }
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  std::string render() const {
    std::vector<std::size_t> width;
    for (const auto& r : rows_)
      for (std::size_t c = 0; c < r.size(); ++c) {
        if (width.size() <= c) width.push_back(0);
        width[c] = std::max(width[c], text::codepoint_length(r[c]));
      }
    std::string out;
    for (std::size_t ri = 0; ri < rows_.size(); ++ri) {
      std::string line;
      for (std::size_t c = 0; c < rows_[ri].size(); ++c) {
        if (c) line += " | ";
        line += pad(rows_[ri][c], width[c]);
      }
      while (!line.empty() && line.back() == ' ') line.pop_back();
      out += line + "\n";
      if (ri == 0) {
        std::size_t total = 0;
        for (auto w : width) total += w;
        out += std::string(total + 3 * (width.size() - 1), '-') + "\n";
      }
    }
    return out;
  }

 private:
  std::vector<std::vector<std::string>> rows_;
};

class Csv {
 public:
  Csv() { out_ << "model,method,metric,value\n"; }
  void add(const std::string& model, const std::string& method, const std::string& metric,
           std::optional<double> value) {
    if (!value) return;
    out_ << quote(model) << ',' << quote(method) << ',' << metric << ',' << fmt(value, 4) << '\n';
  }
  std::string str() const { return out_.str(); }

 private:
  static std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  }
  std::ostringstream out_;
};

}  // namespace report_detail

inline Report render_report(const std::vector<RunRecord>& runs, const std::optional<HumanData>& human,
                            double auto_eps = kAutoEps, double human_eps = kHumanEps) {
  using report_detail::fmt;
  using report_detail::Table;

  std::map<std::pair<std::string, ProtocolKind>, const RunRecord*> by_key;
  std::set<std::string> model_set;
  std::set<ProtocolKind> methods;
  for (const auto& r : runs) {
    by_key[{r.summary.model, r.summary.kind}] = &r;
    model_set.insert(r.summary.model);
    methods.insert(r.summary.kind);
  }
  if (human)
    for (const auto& [m, _] : human->models) model_set.insert(m);
  const std::vector<std::string> models(model_set.begin(), model_set.end());
  auto find = [&](const std::string& m, ProtocolKind k) -> const RunRecord* {
    auto it = by_key.find({m, k});
    return it == by_key.end() ? nullptr : it->second;
  };
  const HumanModelStats* none = nullptr;
  auto human_of = [&](const std::string& m) -> const HumanModelStats* {
    if (!human) return none;
    auto it = human->models.find(m);
    return it == human->models.end() ? none : &it->second;
  };

  std::ostringstream text;
  report_detail::Csv csv;

  for (bool answerable : {false, true}) {
    std::vector<std::string> header{answerable ? "Answerable questions" : "All questions"};
    header.insert(header.end(), models.begin(), models.end());
    Table t(header);
    for (auto k : methods) {
      std::vector<std::string> row{method_name(k) + " (F1)"};
      for (const auto& m : models) {
        const auto* r = find(m, k);
        std::optional<double> v;
        if (r) v = answerable ? r->summary.answerable_f1 : r->summary.overall_f1;
        row.push_back(fmt(v));
        csv.add(m, method_name(k), answerable ? "f1_answerable" : "f1_all", v);
      }
      t.add(std::move(row));
    }
    if (human) {
      std::vector<std::string> row{"Human (Accuracy)"};
      for (const auto& m : models) {
        const auto* h = human_of(m);
        std::optional<double> v;
        if (h) v = answerable ? h->answerable_accuracy : h->accuracy;
        row.push_back(fmt(v));
        csv.add(m, "Human", answerable ? "accuracy_answerable" : "accuracy_all", v);
      }
      t.add(std::move(row));
    }
    text << "== Model performance: " << (answerable ? "answerable questions" : "all questions") << " ==\n"
         << t.render() << "\n";
  }

  {
    std::vector<std::string> header{"Unanswerable questions"};
    for (const char* what : {"predicted %", "precision", "recall"})
      for (const auto& m : models) header.push_back(std::string(what) + " " + m);
    Table t(header);
    for (auto k : methods) {
      std::vector<std::string> rate, prec, rec;
      for (const auto& m : models) {
        const auto* r = find(m, k);
        std::optional<double> a, p, c;
        if (r) {
          a = r->summary.unanswerable.predicted_rate;
          p = r->summary.unanswerable.precision;
          c = r->summary.unanswerable.recall;
        }
        rate.push_back(fmt(a));
        prec.push_back(fmt(p));
        rec.push_back(fmt(c));
        csv.add(m, method_name(k), "unans_predicted_rate", a);
        csv.add(m, method_name(k), "unans_precision", p);
        csv.add(m, method_name(k), "unans_recall", c);
      }
      std::vector<std::string> row{method_name(k)};
      row.insert(row.end(), rate.begin(), rate.end());
      row.insert(row.end(), prec.begin(), prec.end());
      row.insert(row.end(), rec.begin(), rec.end());
      t.add(std::move(row));
    }
    text << "== Unanswerable questions (percent) ==\n" << t.render() << "\n";
  }

  if (human) {
    std::vector<std::string> header{"Human"};
    header.insert(header.end(), models.begin(), models.end());
    Table t(header);
    std::vector<std::string> row{"Unanswerable asked %"};
    for (const auto& m : models) {
      const auto* h = human_of(m);
      if (!h) {
        row.push_back(fmt(std::nullopt));
        continue;
      }
      row.push_back(fmt(h->unanswerable_rate));
      csv.add(m, "Human", "unanswerable_asked_rate", h->unanswerable_rate);
    }
    t.add(std::move(row));
    text << "== Unanswerable questions asked in human evaluation ==\n" << t.render() << "\n";
  }

  {
    text << "== Rankings (worst to best; eps auto=" << fmt(auto_eps, 2) << ", human=" << fmt(human_eps, 2)
         << ") ==\n";
    for (auto k : methods) {
      std::vector<ModelScore> scores;
      for (const auto& m : models)
        if (const auto* r = find(m, k); r && r->summary.overall_f1) scores.push_back({m, *r->summary.overall_f1});
      auto ranking = rank_models(scores, auto_eps);
      text << method_name(k) << ": " << format_ranking(ranking) << "\n";
      for (std::size_t g = 0; g < ranking.size(); ++g)
        for (const auto& ms : ranking[g]) csv.add(ms.model, method_name(k), "rank", static_cast<double>(g + 1));
    }
    if (human) {
      std::vector<ModelScore> scores;
      for (const auto& m : models)
        if (const auto* h = human_of(m); h && h->accuracy) scores.push_back({m, *h->accuracy});
      auto ranking = rank_models(scores, human_eps);
      text << "Human: " << format_ranking(ranking) << "\n";
      for (std::size_t g = 0; g < ranking.size(); ++g)
        for (const auto& ms : ranking[g]) csv.add(ms.model, "Human", "rank", static_cast<double>(g + 1));
    }
    text << "\n";
  }

  if (human && models.size() >= 2) {
    std::vector<std::string> header{"Pair"};
    for (auto k : methods) header.push_back(method_name(k));
    Table t(header);
    bool any = false;
    for (std::size_t a = 0; a < models.size(); ++a) {
      for (std::size_t b = a + 1; b < models.size(); ++b) {
        const auto* ha = human_of(models[a]);
        const auto* hb = human_of(models[b]);
        if (!ha || !hb) continue;
        const std::string pair = models[a] + "/" + models[b];
        std::vector<std::string> row{pair};
        for (auto k : methods) {
          const auto* ra = find(models[a], k);
          const auto* rb = find(models[b], k);
          std::optional<double> v;
          if (ra && rb) {
            auto [auto_a, auto_b] = common_passages(ra->summary.passage_scores, rb->summary.passage_scores);
            auto [hum_a, hum_b] = common_passages(ha->passage_scores, hb->passage_scores);
            auto [aa, hh] = common_passages(auto_a, hum_a);
            PassageScores ab, hb2;
            for (const auto& [pid, _] : aa) {
              ab[pid] = auto_b.at(pid);
              hb2[pid] = hum_b.at(pid);
            }
            auto rep = pairwise_agreement(passage_winners(aa, ab, auto_eps), passage_winners(hh, hb2, human_eps));
            v = rep.agreement;
            csv.add(pair, method_name(k), "pairwise_agreement", v);
            csv.add(pair, method_name(k), "pairwise_compared", static_cast<double>(rep.compared));
            csv.add(pair, method_name(k), "pairwise_ties_auto", static_cast<double>(rep.auto_ties));
            csv.add(pair, method_name(k), "pairwise_ties_human", static_cast<double>(rep.human_ties));
          }
          row.push_back(fmt(v));
        }
        t.add(std::move(row));
        any = true;
      }
    }
    if (any)
      text << "== Pairwise agreement with human evaluation (percent of non-tied passages; "
              "per-passage mean score per method) ==\n"
           << t.render() << "\n";
  }

  {
    Table t({"Repairs", "rewritten", "replaced", "unrewritable", "model errors", "aborted"});
    bool any = false;
    for (const auto& m : models)
      for (auto k : methods)
        if (const auto* r = find(m, k)) {
          const auto& s = r->summary;
          t.add({m + " " + method_name(k), std::to_string(s.rewritten), std::to_string(s.replaced),
                 std::to_string(s.unrewritable), std::to_string(s.model_errors),
                 std::to_string(s.aborted_conversations)});
          csv.add(m, method_name(k), "rewritten", static_cast<double>(s.rewritten));
          csv.add(m, method_name(k), "replaced", static_cast<double>(s.replaced));
          csv.add(m, method_name(k), "unrewritable", static_cast<double>(s.unrewritable));
          any = true;
        }
    if (any) text << "== Question repairs and failures ==\n" << t.render() << "\n";
  }

  {
    Table t({"Invalid questions", "labeled", "unresolved_coreference %", "incoherence %", "answer_changed %"});
    bool any = false;
    for (const auto& m : models)
      for (auto k : methods)
        if (const auto* r = find(m, k)) {
          auto tally = invalidity_tally(r->entries);
          if (tally.labeled == 0) continue;
          any = true;
          std::vector<std::string> row{m + " " + method_name(k), std::to_string(tally.labeled)};
          for (auto l : {InvalidityLabel::unresolved_coreference, InvalidityLabel::incoherence,
                         InvalidityLabel::answer_changed}) {
            row.push_back(fmt(tally.percent[l]));
            csv.add(m, method_name(k), "invalid_" + std::string(to_string(l)) + "_pct", tally.percent[l]);
          }
          t.add(std::move(row));
        }
    if (any) text << "== Invalid question tally (manual labels) ==\n" << t.render() << "\n";
  }

  return {text.str(), csv.str()};
}

}  // namespace convqa
