#pragma once

// HTTP surface of the human evaluation service.

#include <optional>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "convqa/error.hpp"
#include "convqa/humaneval.hpp"

namespace convqa::humaneval {

inline int http_status(const Error& e) {
  const std::string& c = e.code();
  if (c == "UnknownPassage" || c == "UnknownModel" || c == "UnknownSession") return 404;
  if (c == "PhaseError" || c == "TurnLimitExceeded" || c == "TooFewTurns" || c == "OrderingViolation" ||
      c == "ClaimError" || c == "InsufficientJudgments")
    return 409;
  if (c == "InvariantViolation" || c == "BadRequest") return 400;
  if (c == "Unreachable" || c == "Timeout" || c == "ProtocolViolation" || c == "UnknownTurn") return 502;
  return 500;
}

inline nlohmann::ordered_json error_body(const std::string& code, const std::string& detail) {
  return {{"error", code}, {"detail", detail}};
}

namespace http_detail {

inline void reply(httplib::Response& res, int status, const nlohmann::ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

inline nlohmann::json body_json(const httplib::Request& req) {
  try {
    auto j = nlohmann::json::parse(req.body.empty() ? "{}" : req.body);
    if (!j.is_object()) throw Error("BadRequest", "request body must be a JSON object");
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("BadRequest", std::string("invalid JSON: ") + e.what());
  }
}

inline std::string field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) throw Error("BadRequest", std::string("missing string field ") + key);
  return j[key].get<std::string>();
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      reply(res, http_status(e), error_body(e.code(), e.detail()));
    } catch (const std::exception& e) {
      reply(res, 500, error_body("InternalError", e.what()));
    }
  };
}

}  // namespace http_detail

// Registers every route on `server`. Static assets, when given, are served
// from the root mount point.
inline void mount(httplib::Server& server, Service& service, const std::optional<std::string>& static_dir = {}) {
  using http_detail::body_json;
  using http_detail::field;
  using http_detail::guarded;
  using http_detail::reply;

  server.Get("/health", guarded([](const httplib::Request&, httplib::Response& res) {
               reply(res, 200, {{"status", "ok"}});
             }));

  server.Get("/passages", guarded([&service](const httplib::Request&, httplib::Response& res) {
               reply(res, 200, service.passages());
             }));

  server.Get("/models", guarded([&service](const httplib::Request&, httplib::Response& res) {
               reply(res, 200, service.model_ids());
             }));

  server.Post("/sessions", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                auto j = body_json(req);
                auto s = service.open_session(field(j, "passage_id"), field(j, "model_id"), field(j, "annotator_id"));
                reply(res, 201, service.view(s.session_id));
              }));

  server.Get(R"(/sessions/([^/]+))", guarded([&service](const httplib::Request& req, httplib::Response& res) {
               std::optional<std::string> annotator;
               if (req.has_param("annotator")) annotator = req.get_param_value("annotator");
               reply(res, 200, service.view(req.matches[1], annotator));
             }));

  server.Post(R"(/sessions/([^/]+)/ask)", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                auto j = body_json(req);
                auto turn = service.ask(req.matches[1], field(j, "question"));
                auto s = service.get_session(req.matches[1]);
                nlohmann::ordered_json out = turn_json(turn, true);
                out["turn"] = s.turns.size();
                reply(res, 200, out);
              }));

  server.Post(R"(/sessions/([^/]+)/finish)", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                service.finish_conversation(req.matches[1]);
                reply(res, 200, service.view(req.matches[1]));
              }));

  server.Post(R"(/sessions/([^/]+)/claim)", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                auto j = body_json(req);
                auto annotator = field(j, "annotator_id");
                service.claim(req.matches[1], annotator);
                reply(res, 200, service.view(req.matches[1], annotator));
              }));

  server.Post(R"(/sessions/([^/]+)/judgments)",
              guarded([&service](const httplib::Request& req, httplib::Response& res) {
                auto j = body_json(req);
                auto in = parse_judgment_input(j);
                auto stored = service.record_judgment(req.matches[1], in);
                nlohmann::ordered_json out = {{"session_id", std::string(req.matches[1])},
                                              {"annotator_id", stored.annotator_id},
                                              {"turn", stored.turn},
                                              {"complete", stored.complete()}};
                // the answer is revealed once the question-only verdict is in
                auto s = service.get_session(req.matches[1]);
                if (stored.answerability == Answerability::answerable && !stored.correctness)
                  out["answer"] = turn_json(s.turns[stored.turn - 1], true);
                out["phase"] = std::string(to_string(s.phase));
                reply(res, 201, out);
              }));

  server.Get(R"(/models/([^/]+)/stats)", guarded([&service](const httplib::Request& req, httplib::Response& res) {
               reply(res, 200, stats_json(service.session_stats(req.matches[1])));
             }));

  server.Get("/stats", guarded([&service](const httplib::Request&, httplib::Response& res) {
               reply(res, 200, service.all_stats());
             }));

  server.Get("/export", guarded([&service](const httplib::Request&, httplib::Response& res) {
               res.status = 200;
               res.set_content(service.export_annotations(), "application/x-ndjson; charset=utf-8");
             }));

  if (static_dir) server.set_mount_point("/", *static_dir);
}

}  // namespace convqa::humaneval
