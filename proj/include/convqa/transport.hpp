#pragma once

// Wire clients: HTTP and subprocess line-protocol model clients, and the
// HTTP coreference provider client.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <utility>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "convqa/coref.hpp"
#include "convqa/error.hpp"
#include "convqa/model.hpp"
#include "convqa/rule_resolver.hpp"

namespace convqa {

inline constexpr std::chrono::milliseconds kDefaultModelTimeout{30'000};

struct HttpEndpoint {
  std::string base;  // scheme://host:port
  std::string path;
};

inline HttpEndpoint parse_http_url(std::string_view url, std::string_view default_path) {
  auto scheme = url.find("://");
  if (scheme == std::string_view::npos) throw ConfigError("not a URL: " + std::string(url));
  auto slash = url.find('/', scheme + 3);
  HttpEndpoint ep;
  ep.base = std::string(url.substr(0, slash));
  ep.path = slash == std::string_view::npos ? std::string(default_path) : std::string(url.substr(slash));
  if (ep.path.empty() || ep.path == "/") ep.path = std::string(default_path);
  return ep;
}

namespace transport_detail {

inline nlohmann::json post_json(const HttpEndpoint& ep, const std::string& body,
                                std::chrono::milliseconds timeout, const char* what) {
  httplib::Client cli(ep.base);
  auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
  cli.set_connection_timeout(secs.count(), usecs.count());
  cli.set_read_timeout(secs.count(), usecs.count());
  cli.set_write_timeout(secs.count(), usecs.count());
  auto res = cli.Post(ep.path, body, "application/json");
  if (!res) {
    auto err = res.error();
    if (err == httplib::Error::Read || err == httplib::Error::Write)
      throw Timeout(std::string(what) + " at " + ep.base + ep.path + ": " + httplib::to_string(err));
    throw Unreachable(std::string(what) + " at " + ep.base + ep.path + ": " + httplib::to_string(err));
  }
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolViolation(std::string(what) + " returned invalid JSON: " + e.what());
  }
  if (res->status != 200) {
    std::string msg = parsed.is_object() && parsed.contains("error") ? parsed["error"].dump() : res->body;
    throw ProtocolViolation(std::string(what) + " returned HTTP " + std::to_string(res->status) + ": " + msg);
  }
  return parsed;
}

}  // namespace transport_detail

// POST <url> (default path /answer) with one request object.
class HttpModelClient : public ModelClient {
 public:
  explicit HttpModelClient(std::string url, std::chrono::milliseconds timeout = kDefaultModelTimeout)
      : url_(std::move(url)), endpoint_(parse_http_url(url_, "/answer")), timeout_(timeout) {}

  ModelResponse answer(const ModelRequest& req) override {
    auto t0 = std::chrono::steady_clock::now();
    auto body = transport_detail::post_json(endpoint_, to_json(req).dump(), timeout_, "model");
    auto r = parse_model_response(body);
    r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return r;
  }

  std::string name() const override { return url_; }

 private:
  std::string url_;
  HttpEndpoint endpoint_;
  std::chrono::milliseconds timeout_;
};

// Runs `/bin/sh -c <command>` and exchanges one JSON object per line over
// its stdin/stdout. One request in flight at a time; a timed-out or dead
// child is killed and restarted on the next request.
class SubprocessModelClient : public ModelClient {
 public:
  explicit SubprocessModelClient(std::string command,
                                 std::chrono::milliseconds timeout = kDefaultModelTimeout)
      : command_(std::move(command)), timeout_(timeout) {
    ::signal(SIGPIPE, SIG_IGN);
  }

  ~SubprocessModelClient() override { stop(); }

  SubprocessModelClient(const SubprocessModelClient&) = delete;
  SubprocessModelClient& operator=(const SubprocessModelClient&) = delete;

  ModelResponse answer(const ModelRequest& req) override {
    std::lock_guard lock(mu_);
    if (pid_ <= 0) start();
    auto t0 = std::chrono::steady_clock::now();
    std::string line = to_json(req).dump() + "\n";
    if (!write_all(line)) {
      stop();
      throw Unreachable("model process '" + command_ + "' closed its input");
    }
    std::string reply = read_line(t0);
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(reply);
    } catch (const nlohmann::json::parse_error& e) {
      throw ProtocolViolation(std::string("model process wrote invalid JSON: ") + e.what());
    }
    auto r = parse_model_response(parsed);
    r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return r;
  }

  std::string name() const override { return command_; }

 private:
  void start() {
    int in_pipe[2], out_pipe[2];
    if (::pipe(in_pipe) != 0) throw Unreachable(std::string("pipe: ") + std::strerror(errno));
    if (::pipe(out_pipe) != 0) {
      ::close(in_pipe[0]);
      ::close(in_pipe[1]);
      throw Unreachable(std::string("pipe: ") + std::strerror(errno));
    }
    pid_t pid = ::fork();
    if (pid < 0) throw Unreachable(std::string("fork: ") + std::strerror(errno));
    if (pid == 0) {
      ::dup2(in_pipe[0], STDIN_FILENO);
      ::dup2(out_pipe[1], STDOUT_FILENO);
      ::close(in_pipe[0]);
      ::close(in_pipe[1]);
      ::close(out_pipe[0]);
      ::close(out_pipe[1]);
      ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    pid_ = pid;
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    ::fcntl(to_child_, F_SETFD, FD_CLOEXEC);
    ::fcntl(from_child_, F_SETFD, FD_CLOEXEC);
    buffer_.clear();
  }

  void stop() {
    if (to_child_ >= 0) ::close(to_child_);
    if (from_child_ >= 0) ::close(from_child_);
    to_child_ = from_child_ = -1;
    if (pid_ > 0) {
      ::kill(pid_, SIGTERM);
      ::waitpid(pid_, nullptr, 0);
    }
    pid_ = -1;
    buffer_.clear();
  }

  bool write_all(const std::string& data) {
    std::size_t off = 0;
    while (off < data.size()) {
      ssize_t n = ::write(to_child_, data.data() + off, data.size() - off);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return false;
      off += static_cast<std::size_t>(n);
    }
    return true;
  }

  std::string read_line(std::chrono::steady_clock::time_point t0) {
    for (;;) {
      if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      auto left = timeout_ - std::chrono::duration_cast<std::chrono::milliseconds>(
                                 std::chrono::steady_clock::now() - t0);
      if (left.count() <= 0) {
        stop();
        throw Timeout("model process '" + command_ + "' did not answer in " +
                      std::to_string(timeout_.count()) + " ms");
      }
      pollfd pfd{from_child_, POLLIN, 0};
      int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
      if (rc < 0 && errno == EINTR) continue;
      if (rc == 0) continue;
      char buf[4096];
      ssize_t n = ::read(from_child_, buf, sizeof buf);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) {
        stop();
        throw Unreachable("model process '" + command_ + "' exited");
      }
      buffer_.append(buf, static_cast<std::size_t>(n));
    }
  }

  std::string command_;
  std::chrono::milliseconds timeout_;
  std::mutex mu_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

class HttpCorefClient : public CorefResolver {
 public:
  explicit HttpCorefClient(std::string url, std::chrono::milliseconds timeout = kDefaultModelTimeout)
      : url_(std::move(url)), endpoint_(parse_http_url(url_, "/coref")), timeout_(timeout) {}

  ClusterSet resolve(const CorefInput& input) override {
    auto body = transport_detail::post_json(endpoint_, coref_request_json(input).dump(), timeout_,
                                            "coref provider");
    return parse_coref_response(input, body);
  }

  std::string id() const override { return url_; }

 private:
  std::string url_;
  HttpEndpoint endpoint_;
  std::chrono::milliseconds timeout_;
};

// "scripted:<kind>", "http://...", "https://..." or "exec:<command>".
inline std::unique_ptr<ModelClient> make_model_client(std::string_view spec,
                                                      std::shared_ptr<const Corpus> corpus,
                                                      std::chrono::milliseconds timeout = kDefaultModelTimeout) {
  if (spec.starts_with("scripted:")) {
    auto kind = parse_scripted_kind(spec.substr(9));
    if (!kind) throw ConfigError("unknown scripted model '" + std::string(spec.substr(9)) + "'");
    return std::make_unique<ScriptedModel>(*kind, std::move(corpus));
  }
  if (spec.starts_with("http://") || spec.starts_with("https://"))
    return std::make_unique<HttpModelClient>(std::string(spec), timeout);
  if (spec.starts_with("exec:")) {
    if (spec.size() == 5) throw ConfigError("exec: needs a command");
    return std::make_unique<SubprocessModelClient>(std::string(spec.substr(5)), timeout);
  }
  throw ConfigError("unrecognized model '" + std::string(spec) +
                    "' (expected scripted:<kind>, http://..., or exec:<command>)");
}

// "rule" or an http(s) URL.
inline std::unique_ptr<CorefResolver> make_coref_resolver(std::string_view spec,
                                                          std::chrono::milliseconds timeout = kDefaultModelTimeout) {
  if (spec == "rule") return std::make_unique<RuleCorefResolver>();
  if (spec.starts_with("http://") || spec.starts_with("https://"))
    return std::make_unique<HttpCorefClient>(std::string(spec), timeout);
  throw ConfigError("unrecognized coref provider '" + std::string(spec) + "' (expected rule or http://...)");
}

}  // namespace convqa
