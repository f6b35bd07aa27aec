// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <ctime>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "simlabel/pipeline.hpp"

namespace simlabel {

inline std::string rfc3339_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline int http_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return 400;
    case ErrorKind::NotFound: return 404;
    case ErrorKind::Conflict: return 409;
    case ErrorKind::Unavailable: return 503;
    case ErrorKind::Corrupt:
    case ErrorKind::Io:
    case ErrorKind::Diverged:
    case ErrorKind::StaleIndex: return 500;
  }
  return 500;
}

struct JobStatus {
  std::uint64_t id = 0;
  std::string kind = "train_round";
  std::string phase = "queued";  // queued | running | done | failed
  int epoch = 0;
  int result_round = 0;
  std::string pipeline_phase;
  std::string error;
};

inline nlohmann::ordered_json to_json(const JobStatus& j) {
  nlohmann::ordered_json o;
  o["id"] = j.id;
  o["kind"] = j.kind;
  o["phase"] = j.phase;
  o["epoch"] = j.epoch;
  o["result_round"] = j.result_round;
  o["pipeline_phase"] = j.pipeline_phase;
  if (!j.error.empty()) o["error"] = j.error;
  return o;
}

/// HTTP front end over one state directory. Reads are served from an
/// immutable snapshot of the manifest's round; rating writes and job launches
/// go through one writer lock; training runs on a background thread.
class Service {
 public:
  Service(std::filesystem::path state_dir, Corpus corpus,
          std::string bearer_token = {})
      : store_(std::move(state_dir)),
        corpus_(std::move(corpus)),
        token_(std::move(bearer_token)) {
    reload();
    const auto& snap = *snapshot();
    require(snap.state.lsm.n() == corpus_.n(),
            "corpus has " + std::to_string(corpus_.n()) + " tags but the state has " +
                std::to_string(snap.state.lsm.n()));
    routes();
  }

  ~Service() {
    server_.stop();
    if (worker_.joinable()) worker_.join();
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  httplib::Server& server() noexcept { return server_; }

  /// Binds to `port` (0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port) {
    if (port == 0) return server_.bind_to_any_port(host);
    if (!server_.bind_to_port(host, port)) {
      fail(ErrorKind::Io, "cannot bind " + host + ":" + std::to_string(port));
    }
    return port;
  }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }

  bool job_running() const { return running_.load(); }

  /// Blocks until the current job (if any) finishes.
  void wait_for_job() {
    std::lock_guard lock(writer_);
    if (worker_.joinable()) worker_.join();
  }

 private:
  struct Snapshot {
    IterationState state;
    PipelineConfig config;
    std::string lsm_text;
    std::optional<HashingEncoder> encoder;
    std::optional<ItdIndex> index;
  };

  std::shared_ptr<const Snapshot> snapshot() const {
    std::lock_guard lock(snap_mutex_);
    return snap_;
  }

  void reload() {
    auto loaded = store_.load();
    auto snap = std::make_shared<Snapshot>();
    snap->config = loaded.config;
    snap->state = std::move(loaded.state);
    snap->lsm_text = read_file(store_.latest_dir() / "lsm.json");
    if (snap->state.best_params) {
      snap->encoder.emplace(snap->state.best_params, snap->config.tokenizer);
      snap->index = build_itd_index(*snap->encoder, corpus_);
    }
    std::lock_guard lock(snap_mutex_);
    snap_ = std::move(snap);
  }

  static void send_json(httplib::Response& res, const nlohmann::ordered_json& body,
                        int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& what) {
    nlohmann::ordered_json body;
    body["error"] = what;
    send_json(res, body, status);
  }

  /// Wraps a handler with auth and error-to-status mapping.
  template <typename Fn>
  httplib::Server::Handler guarded(Fn fn) {
    return [this, fn](const httplib::Request& req, httplib::Response& res) {
      if (!token_.empty() && req.get_header_value("Authorization") != "Bearer " + token_) {
        send_error(res, 401, "missing or wrong bearer token");
        return;
      }
      try {
        fn(req, res);
      } catch (const Error& e) {
        send_error(res, http_status(e.kind()), e.what());
      } catch (const nlohmann::json::exception& e) {
        send_error(res, 400, std::string("bad JSON: ") + e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      }
    };
  }

  void routes() {
    server_.Get("/api/tags", guarded([this](const auto&, auto& res) {
      nlohmann::ordered_json out = nlohmann::ordered_json::array();
      for (const auto& t : corpus_.tags()) {
        out.push_back({{"tag_id", t.tag_id}, {"name", t.name}, {"itd", t.itd}});
      }
      send_json(res, out);
    }));

    server_.Get("/api/lsm", guarded([this](const auto&, auto& res) {
      res.status = 200;
      res.set_content(snapshot()->lsm_text, "application/json");
    }));

    server_.Get("/api/metrics/history", guarded([this](const auto&, auto& res) {
      nlohmann::ordered_json out = nlohmann::ordered_json::array();
      for (const auto& h : snapshot()->state.history) out.push_back(to_json(h));
      send_json(res, out);
    }));

    server_.Get("/api/pairs/pending", guarded([this](const auto&, auto& res) {
      if (running_) fail(ErrorKind::Conflict, "a training job is running");
      const auto snap = snapshot();
      nlohmann::ordered_json out = nlohmann::ordered_json::array();
      if (snap->state.awaiting_ratings()) {
        for (const auto& q : snap->state.queue) {
          nlohmann::ordered_json item;
          item["i"] = q.i;
          item["j"] = q.j;
          item["tag_i"] = corpus_.tag(q.i).name;
          item["tag_j"] = corpus_.tag(q.j).name;
          item["itd_i"] = corpus_.tag(q.i).itd;
          item["itd_j"] = corpus_.tag(q.j).itd;
          item["model_rating"] = q.model_rating ? nlohmann::ordered_json(*q.model_rating)
                                                : nlohmann::ordered_json(nullptr);
          item["prior_sme_rating"] = q.prior_rating ? nlohmann::ordered_json(*q.prior_rating)
                                                    : nlohmann::ordered_json(nullptr);
          out.push_back(std::move(item));
        }
      }
      send_json(res, out);
    }));

    server_.Post("/api/pairs/rating", guarded([this](const auto& req, auto& res) {
      submit_rating(req, res);
    }));

    server_.Post("/api/iterations", guarded([this](const auto&, auto& res) {
      send_json(res, to_json(launch()), 202);
    }));

    server_.Get("/api/iterations/current", guarded([this](const auto&, auto& res) {
      std::lock_guard lock(job_mutex_);
      if (job_.id == 0) fail(ErrorKind::NotFound, "no iteration has been launched");
      send_json(res, to_json(job_));
    }));

    server_.Get(R"(/api/companies/([^/]+)/predictions)",
                guarded([this](const auto& req, auto& res) {
      const auto snap = snapshot();
      if (!snap->encoder) fail(ErrorKind::Unavailable, "no trained checkpoint yet");
      const std::string id = req.matches[1];
      const auto* rec = corpus_.find(id);
      if (!rec) fail(ErrorKind::NotFound, "unknown company " + id);
      int k = snap->config.k;
      if (req.has_param("k")) {
        const auto text = req.get_param_value("k");
        std::size_t used = 0;
        try {
          k = std::stoi(text, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used == 0 || used != text.size()) fail(ErrorKind::InvalidArgument, "k must be an integer");
      }
      const auto ranked = rank_tags(*snap->index, *snap->encoder, rec->cbd, rec->company_id);
      send_json(res, to_json(ranked, k));
    }));
  }

  void submit_rating(const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    require(body.is_object(), "rating body must be a JSON object");
    auto int_field = [&](const char* key) {
      if (!body.contains(key) || !body.at(key).is_number_integer()) {
        fail(ErrorKind::InvalidArgument, std::string("field '") + key + "' must be an integer");
      }
      return body.at(key).get<long long>();
    };
    const auto i = int_field("i");
    const auto j = int_field("j");
    const auto rating = int_field("rating");
    if (!body.contains("nonce") || !body.at("nonce").is_string() ||
        body.at("nonce").get<std::string>().empty()) {
      fail(ErrorKind::InvalidArgument, "field 'nonce' must be a nonempty string");
    }
    const auto nonce = body.at("nonce").get<std::string>();
    const auto n = corpus_.n();
    require(i >= 0 && j >= 0 && i < n && j < n, "tag id out of range");
    require(i != j, "diagonal cells cannot be rated");
    require(rating >= 0 && rating <= Rating::kMax, "rating must be 0..5");
    const auto p = Pair::canonical(static_cast<TagId>(i), static_cast<TagId>(j));

    std::lock_guard lock(writer_);
    if (running_) fail(ErrorKind::Conflict, "a training job is running");
    const auto snap = snapshot();
    if (!snap->state.awaiting_ratings()) {
      fail(ErrorKind::Conflict, std::string("no ratings are being collected (phase ") +
                                    to_string(snap->state.phase) + ")");
    }
    const auto inbox_path = store_.latest_dir() / "inbox.json";
    auto inbox = read_inbox(inbox_path);
    const InboxEntry* existing = nullptr;
    for (const auto& e : inbox) {
      if (e.nonce == nonce) existing = &e;
    }
    InboxEntry entry;
    if (existing) {
      entry = *existing;
    } else {
      entry = {p.i, p.j, static_cast<int>(rating), nonce,
               body.contains("submitted_at") && body.at("submitted_at").is_string()
                   ? body.at("submitted_at").get<std::string>()
                   : rfc3339_now()};
      inbox.push_back(entry);
      write_inbox(inbox_path, inbox);
    }
    const Lsm blank(n);
    const Lsm& model = snap->state.model_lsm ? *snap->state.model_lsm : blank;
    const auto outcome = classify_review(model, entry.i, entry.j, Rating(entry.rating));
    nlohmann::ordered_json out;
    out["state"] = to_string(outcome);
    out["i"] = entry.i;
    out["j"] = entry.j;
    out["rating"] = entry.rating;
    out["nonce"] = entry.nonce;
    out["duplicate"] = existing != nullptr;
    send_json(res, out);
  }

  JobStatus launch() {
    std::lock_guard lock(writer_);
    if (running_) fail(ErrorKind::Conflict, "a training job is already running");
    if (snapshot()->state.phase == Phase::Done) {
      fail(ErrorKind::Conflict, "the pipeline has finished");
    }
    if (worker_.joinable()) worker_.join();
    JobStatus status;
    {
      std::lock_guard jl(job_mutex_);
      job_ = JobStatus{};
      job_.id = ++job_counter_;
      job_.phase = "running";
      job_.result_round = snapshot()->state.round;
      job_.pipeline_phase = to_string(snapshot()->state.phase);
      status = job_;
    }
    running_ = true;
    worker_ = std::thread([this] { run_job(); });
    return status;
  }

  void run_job() {
    try {
      LiveOracle oracle(store_);
      const auto snap = snapshot();
      Pipeline pipeline(corpus_, snap->config, oracle, &store_);
      pipeline.set_progress([this](const EpochRecord& rec) {
        std::lock_guard jl(job_mutex_);
        job_.epoch = rec.epoch;
      });
      const auto s = pipeline.run(snap->state);
      reload();
      std::lock_guard jl(job_mutex_);
      job_.phase = "done";
      job_.result_round = s.round;
      job_.pipeline_phase = to_string(s.phase);
    } catch (const std::exception& e) {
      try {
        reload();
      } catch (const std::exception&) {
      }
      std::lock_guard jl(job_mutex_);
      job_.phase = "failed";
      job_.error = e.what();
    }
    running_ = false;
  }

  StateStore store_;
  Corpus corpus_;
  std::string token_;
  httplib::Server server_;

  mutable std::mutex snap_mutex_;
  std::shared_ptr<const Snapshot> snap_;

  std::mutex writer_;
  std::mutex job_mutex_;
  JobStatus job_;
  std::uint64_t job_counter_ = 0;
  std::atomic<bool> running_{false};
  std::thread worker_;
};

}  // namespace simlabel
