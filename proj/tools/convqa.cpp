// convqa: eval | report | serve

#include <cctype>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "convqa/convqa.hpp"

namespace fs = std::filesystem;
using namespace convqa;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFatal = 1;
constexpr int kExitPartial = 2;

struct EvalFlags {
  std::string data;
  std::string model;
  std::string protocol;
  std::string window = "all";
  std::string coref = "rule";
  std::string coref_window = "all";
  std::string replacements;
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  std::string out = ".";
  std::string name;
  long timeout_ms = kDefaultModelTimeout.count();
  bool no_ne_filter = false;
};

struct ReportFlags {
  std::vector<std::string> logs;
  std::string out = ".";
  std::string human;
  double eps = kAutoEps;
  double human_eps = kHumanEps;
};

struct ServeFlags {
  int port = 8080;
  std::string host = "127.0.0.1";
  std::string store = "eval-store";
  std::string data;
  std::vector<std::string> models;
  std::string static_dir;
  long timeout_ms = kDefaultModelTimeout.count();
};

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("IOError", "cannot write " + path.string());
  out << content;
}

std::string default_name(const std::string& model) {
  std::string n;
  for (char c : model) n += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_';
  return n;
}

int cmd_eval(const EvalFlags& f) {
  // Validate everything before touching the network.
  ProtocolConfig cfg;
  cfg.kind = parse_protocol_kind(f.protocol);
  cfg.window = parse_window(f.window);
  cfg.jobs = f.jobs;
  const std::chrono::milliseconds timeout{f.timeout_ms};
  auto corpus = std::make_shared<const Corpus>(load_dataset(f.data));
  if (cfg.kind == ProtocolKind::rewrite || cfg.kind == ProtocolKind::replace) {
    DetectorConfig d;
    d.resolver = make_coref_resolver(f.coref, timeout);
    d.ne_filter = !f.no_ne_filter;
    d.coref_window = parse_window(f.coref_window);
    cfg.detector = d;
  }
  if (cfg.kind == ProtocolKind::replace) {
    if (f.replacements.empty()) throw ConfigError("--protocol replace needs --replacements");
    auto table = std::make_shared<const ReplacementTable>(load_replacements(f.replacements));
    for (const auto& k : unmatched_replacement_keys(*table, *corpus))
      std::cerr << "warning: replacement key " << k << " matches no turn\n";
    cfg.replacements = table;
  } else if (!f.replacements.empty()) {
    throw ConfigError("--replacements only applies to --protocol replace");
  }
  cfg.validate();
  auto model = make_model_client(f.model, corpus, timeout);

  ProtocolRun run = run_protocol(*corpus, *model, cfg);
  run.model = f.name.empty() ? default_name(f.model) : f.name;
  RunSummary summary = summarize(run);

  fs::create_directories(f.out);
  const std::string stem = run.model + "." + std::string(to_string(cfg.kind));
  std::ostringstream log;
  write_run_log(log, run);
  write_text(fs::path(f.out) / (stem + ".jsonl"), log.str());
  write_text(fs::path(f.out) / (stem + ".summary.json"), to_json(summary).dump(2) + "\n");

  std::cout << method_name(cfg.kind) << " " << run.model << ": F1 " << report_detail::fmt(summary.overall_f1)
            << " over " << summary.turns << " questions in " << summary.conversations << " conversations";
  if (summary.repaired() || summary.unrewritable)
    std::cout << "; rewritten " << summary.rewritten << ", replaced " << summary.replaced << ", unrewritable "
              << summary.unrewritable;
  std::cout << "\n";
  for (const auto& c : run.conversations)
    if (c.aborted) std::cerr << "conversation " << c.conversation_id << " aborted: " << c.abort_reason.value_or("") << "\n";
  if (summary.model_errors) std::cerr << summary.model_errors << " model errors recorded\n";
  return summary.partial_failure() ? kExitPartial : kExitOk;
}

fs::path summary_path_for(const fs::path& log) {
  auto stem = log.filename().string();
  if (stem.ends_with(".jsonl")) stem.resize(stem.size() - 6);
  return log.parent_path() / (stem + ".summary.json");
}

int cmd_report(const ReportFlags& f) {
  if (f.logs.empty()) throw MissingLogs("report needs at least one run log");
  std::vector<RunRecord> runs;
  for (const auto& p : f.logs) {
    RunRecord r;
    r.entries = read_run_log(fs::path(p));
    auto sp = summary_path_for(p);
    if (!fs::exists(sp)) throw MissingLogs("no summary next to " + p + " (expected " + sp.string() + ")");
    r.summary = summary_from_json(nlohmann::json::parse(read_file(sp)));
    runs.push_back(std::move(r));
  }
  std::optional<HumanData> human;
  if (!f.human.empty()) human = human_data_from_json(nlohmann::json::parse(read_file(f.human)));
  Report rep = render_report(runs, human, f.eps, f.human_eps);
  fs::create_directories(f.out);
  write_text(fs::path(f.out) / "report.txt", rep.text);
  write_text(fs::path(f.out) / "report.csv", rep.csv);
  std::cout << rep.text;
  return kExitOk;
}

httplib::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

int cmd_serve(ServeFlags f) {
  if (const char* env = std::getenv("CONVQA_EVAL_STORE"); env && *env) f.store = env;
  if (f.data.empty()) throw ConfigError("serve needs --data");
  if (f.models.empty()) throw ConfigError("serve needs at least one --model id=spec");
  auto corpus = std::make_shared<const Corpus>(load_dataset(f.data));
  std::map<std::string, std::shared_ptr<ModelClient>> models;
  for (const auto& m : f.models) {
    auto eq = m.find('=');
    std::string id = eq == std::string::npos ? default_name(m) : m.substr(0, eq);
    std::string spec = eq == std::string::npos ? m : m.substr(eq + 1);
    if (models.contains(id)) throw ConfigError("duplicate model id " + id);
    models[id] = make_model_client(spec, corpus, std::chrono::milliseconds{f.timeout_ms});
  }
  humaneval::Service service(corpus, std::move(models), humaneval::EventStore(f.store));

  httplib::Server server;
  // httplib's defaults add SO_REUSEPORT, which lets a second server share a busy port.
  server.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  });
  std::optional<std::string> static_dir;
  if (!f.static_dir.empty()) static_dir = f.static_dir;
  humaneval::mount(server, service, static_dir);
  if (!server.bind_to_port(f.host, f.port)) {
    std::cerr << "PortInUse: cannot bind " << f.host << ":" << f.port << "\n";
    return kExitFatal;
  }
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "serving on http://" << f.host << ":" << f.port << " (" << service.session_count()
            << " sessions restored from " << f.store << ")" << std::endl;
  server.listen_after_bind();
  g_server = nullptr;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ConvQA evaluation harness"};
  app.require_subcommand(1);

  EvalFlags ef;
  auto* eval = app.add_subcommand("eval", "replay a dataset against a model under one protocol");
  eval->add_option("--data", ef.data, "dataset file")->required()->check(CLI::ExistingFile);
  eval->add_option("--model", ef.model, "scripted:<kind> | http://... | exec:<command>")->required();
  eval->add_option("--protocol", ef.protocol, "gold | pred | rewrite | replace")
      ->required()
      ->check(CLI::IsMember({"gold", "pred", "rewrite", "replace"}));
  eval->add_option("--window", ef.window, "history turns shown to the model (k or all)")->capture_default_str();
  eval->add_option("--coref", ef.coref, "rule | http://...")->capture_default_str();
  eval->add_option("--coref-window", ef.coref_window, "history turns given to the resolver (k or all)")->capture_default_str();
  eval->add_option("--replacements", ef.replacements, "turn_id<TAB>question table")->check(CLI::ExistingFile);
  eval->add_option("--jobs", ef.jobs, "concurrent conversations")->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_option("--out", ef.out, "output directory")->capture_default_str();
  eval->add_option("--name", ef.name, "model name used in outputs");
  eval->add_option("--timeout", ef.timeout_ms, "model/coref request timeout in ms")->capture_default_str()
      ->check(CLI::PositiveNumber);
  eval->add_flag("--no-ne-filter", ef.no_ne_filter, "keep named-entity clusters in entity lists");

  ReportFlags rf;
  auto* report = app.add_subcommand("report", "tabulate run logs");
  report->add_option("logs", rf.logs, "run logs (*.jsonl); summaries are read alongside")->required();
  report->add_option("--out", rf.out, "output directory")->capture_default_str();
  report->add_option("--human", rf.human, "human stats JSON (as served by GET /stats)")->check(CLI::ExistingFile);
  report->add_option("--eps", rf.eps, "tie threshold for automatic scores")->capture_default_str();
  report->add_option("--human-eps", rf.human_eps, "tie threshold for human scores")->capture_default_str();

  ServeFlags sf;
  auto* serve = app.add_subcommand("serve", "host the human evaluation service");
  serve->add_option("--port", sf.port, "listen port")->capture_default_str();
  serve->add_option("--host", sf.host, "listen address")->capture_default_str();
  serve->add_option("--store", sf.store, "event store directory (CONVQA_EVAL_STORE overrides)")->capture_default_str();
  serve->add_option("--data", sf.data, "dataset file")->required()->check(CLI::ExistingFile);
  serve->add_option("--model", sf.models, "model as id=spec; repeatable")->required();
  serve->add_option("--static", sf.static_dir, "directory of web console assets")->check(CLI::ExistingDirectory);
  serve->add_option("--timeout", sf.timeout_ms, "model request timeout in ms")->capture_default_str()->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitFatal;
  }

  try {
    if (*eval) return cmd_eval(ef);
    if (*report) return cmd_report(rf);
    if (*serve) return cmd_serve(sf);
  } catch (const Error& e) {
    std::cerr << e.code() << ": " << e.detail() << "\n";
    return kExitFatal;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFatal;
  }
  return kExitFatal;
}
