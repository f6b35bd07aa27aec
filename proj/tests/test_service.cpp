// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <httplib.h>

#include <memory>
#include <thread>

#include "support.hpp"

using namespace simlabel;
using simlabel::fixture::TempDir;

namespace {

const SyntheticCorpus& synth() {
  static const auto s = generate_synthetic(6, 120, {}, 19);
  return s;
}

PipelineConfig service_config(int epochs) {
  PipelineConfig c;
  c.learning_rates = {1e-2};
  c.dims = {16};
  c.capacity_ladder = {};
  c.epochs = epochs;
  c.batch_size = 16;
  c.patience = 0;
  c.per_stratum = 6;
  c.validation_companies = 40;
  c.max_rounds = 3;
  c.seed = 7;
  c.tokenizer.vocab_size = 4096;
  return c;
}

const httplib::Headers kAuth = {{"Authorization", "Bearer tok"}};

class Harness {
 public:
  explicit Harness(const std::filesystem::path& dir)
      : service_(dir, synth().corpus, "tok") {
    port_ = service_.bind("127.0.0.1", 0);
    thread_ = std::thread([this] { service_.listen_after_bind(); });
    service_.server().wait_until_ready();
  }
  ~Harness() {
    service_.stop();
    thread_.join();
  }

  Service& service() { return service_; }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port_); }

  httplib::Result get(const std::string& path) const { return client().Get(path, kAuth); }
  httplib::Result post(const std::string& path, const std::string& body) const {
    return client().Post(path, kAuth, body, "application/json");
  }
  httplib::Result rate(int i, int j, int rating, const std::string& nonce) const {
    return post("/api/pairs/rating",
                nlohmann::json{{"i", i}, {"j", j}, {"rating", rating}, {"nonce", nonce}}.dump());
  }

 private:
  Service service_;
  int port_ = 0;
  std::thread thread_;
};

// State directory with the bootstrap queue waiting for SME answers.
void prepare_live(const std::filesystem::path& dir, const PipelineConfig& cfg) {
  StateStore store(dir);
  store.init(cfg, "live");
  LiveOracle live(store);
  Pipeline p(synth().corpus, cfg, live, &store);
  ASSERT_EQ(p.bootstrap().phase, Phase::AwaitRatings);
}

void prepare_done(const std::filesystem::path& dir, const PipelineConfig& cfg) {
  StateStore store(dir);
  store.init(cfg, "simulated");
  SimulatedOracle oracle(synth().ground_truth);
  Pipeline p(synth().corpus, cfg, oracle, &store);
  ASSERT_EQ(p.run(p.bootstrap()).phase, Phase::Done);
}

nlohmann::json body(const httplib::Result& r) { return nlohmann::json::parse(r->body); }

void answer_pending(const Harness& h) {
  const auto pending = body(h.get("/api/pairs/pending"));
  int n = 0;
  for (const auto& q : pending) {
    const int i = q.at("i"), j = q.at("j");
    const auto res = h.rate(i, j, *synth().ground_truth.rating(i, j),
                            "answer-" + std::to_string(n++));
    ASSERT_EQ(res->status, 200) << res->body;
  }
}

}  // namespace

TEST(Service, RequiresBearerToken) {
  TempDir dir("svc_auth");
  prepare_live(dir.path(), service_config(4));
  Harness h(dir.path());
  auto cli = h.client();
  EXPECT_EQ(cli.Get("/api/tags")->status, 401);
  EXPECT_EQ(cli.Get("/api/tags", {{"Authorization", "Bearer nope"}})->status, 401);
  EXPECT_EQ(cli.Post("/api/iterations", "", "application/json")->status, 401);
  EXPECT_EQ(h.get("/api/tags")->status, 200);
}

TEST(Service, RejectsMismatchedCorpus) {
  TempDir dir("svc_mismatch");
  prepare_live(dir.path(), service_config(4));
  EXPECT_THROW(Service(dir.path(), generate_synthetic(5, 50, {}, 1).corpus), Error);
}

TEST(Service, ReadEndpointsBeforeTraining) {
  TempDir dir("svc_read");
  prepare_live(dir.path(), service_config(4));
  Harness h(dir.path());

  const auto tags = body(h.get("/api/tags"));
  ASSERT_EQ(tags.size(), 6u);
  EXPECT_EQ(tags[2].at("tag_id"), 2);
  EXPECT_EQ(tags[2].at("itd"), synth().corpus.tag(2).itd);

  const auto lsm = h.get("/api/lsm");
  ASSERT_EQ(lsm->status, 200);
  EXPECT_EQ(lsm->body, read_file(StateStore(dir.path()).latest_dir() / "lsm.json"));

  EXPECT_EQ(body(h.get("/api/metrics/history")), nlohmann::json::array());
  EXPECT_EQ(h.get("/api/iterations/current")->status, 404);
  EXPECT_EQ(h.get("/api/companies/" + synth().corpus.companies()[0].company_id +
                  "/predictions")->status,
            503);

  const auto pending = body(h.get("/api/pairs/pending"));
  ASSERT_EQ(pending.size(), 3u);
  for (const auto& q : pending) {
    EXPECT_LT(q.at("i"), q.at("j"));
    EXPECT_TRUE(q.at("model_rating").is_null());
    EXPECT_TRUE(q.at("prior_sme_rating").is_null());
    EXPECT_EQ(q.at("itd_i"), synth().corpus.tag(q.at("i").get<int>()).itd);
  }
}

TEST(Service, RatingValidation) {
  TempDir dir("svc_validate");
  prepare_live(dir.path(), service_config(4));
  Harness h(dir.path());
  EXPECT_EQ(h.post("/api/pairs/rating", "{not json")->status, 400);
  EXPECT_EQ(h.post("/api/pairs/rating", "[1,2]")->status, 400);
  EXPECT_EQ(h.post("/api/pairs/rating", R"({"i":0,"j":1,"rating":3})")->status, 400);
  EXPECT_EQ(h.post("/api/pairs/rating", R"({"i":0,"j":1,"rating":"3","nonce":"x"})")->status, 400);
  EXPECT_EQ(h.rate(2, 2, 3, "diag")->status, 400);
  EXPECT_EQ(h.rate(0, 6, 3, "range")->status, 400);
  EXPECT_EQ(h.rate(-1, 2, 3, "neg")->status, 400);
  EXPECT_EQ(h.rate(0, 1, 6, "high")->status, 400);
  EXPECT_TRUE(read_inbox(StateStore(dir.path()).latest_dir() / "inbox.json").empty());
}

TEST(Service, RatingNonceIsIdempotent) {
  TempDir dir("svc_nonce");
  prepare_live(dir.path(), service_config(4));
  Harness h(dir.path());

  const auto first = h.rate(3, 1, 4, "abc");
  ASSERT_EQ(first->status, 200);
  const auto a = body(first);
  EXPECT_EQ(a.at("i"), 1);
  EXPECT_EQ(a.at("j"), 3);
  EXPECT_EQ(a.at("state"), "newly_rated");
  EXPECT_FALSE(a.at("duplicate").get<bool>());

  const auto b = body(h.rate(1, 3, 0, "abc"));
  EXPECT_TRUE(b.at("duplicate").get<bool>());
  EXPECT_EQ(b.at("rating"), 4);

  const auto inbox = read_inbox(StateStore(dir.path()).latest_dir() / "inbox.json");
  ASSERT_EQ(inbox.size(), 1u);
  EXPECT_EQ(inbox[0].rating, 4);
  EXPECT_FALSE(inbox[0].submitted_at.empty());
}

TEST(Service, IterationTrainsAndServesPredictions) {
  TempDir dir("svc_iter");
  prepare_live(dir.path(), service_config(4));
  Harness h(dir.path());
  answer_pending(h);

  const auto launched = h.post("/api/iterations", "");
  ASSERT_EQ(launched->status, 202);
  EXPECT_EQ(body(launched).at("id"), 1);
  h.service().wait_for_job();

  const auto job = body(h.get("/api/iterations/current"));
  EXPECT_EQ(job.at("phase"), "done") << job.dump();
  EXPECT_EQ(job.at("result_round"), 1);
  EXPECT_EQ(job.at("pipeline_phase"), "await_review");
  EXPECT_EQ(job.at("epoch"), 4);

  EXPECT_EQ(body(h.get("/api/metrics/history")).size(), 1u);
  const auto pending = body(h.get("/api/pairs/pending"));
  ASSERT_FALSE(pending.empty());
  for (const auto& q : pending) EXPECT_FALSE(q.at("model_rating").is_null());

  const auto id = synth().corpus.companies()[5].company_id;
  const auto pred = h.get("/api/companies/" + id + "/predictions?k=2");
  ASSERT_EQ(pred->status, 200);
  const auto p = body(pred);
  EXPECT_EQ(p.at("company_id"), id);
  EXPECT_EQ(p.at("ranked").size(), 6u);
  EXPECT_EQ(p.at("assigned").size(), 2u);
  EXPECT_EQ(h.get("/api/companies/" + id + "/predictions?k=two")->status, 400);
  EXPECT_EQ(h.get("/api/companies/" + id + "/predictions?k=2x")->status, 400);
  EXPECT_EQ(h.get("/api/companies/no-such-company/predictions")->status, 404);
}

TEST(Service, ConflictsWhileJobRuns) {
  TempDir dir("svc_busy");
  prepare_live(dir.path(), service_config(3000));
  Harness h(dir.path());
  answer_pending(h);
  ASSERT_EQ(h.post("/api/iterations", "")->status, 202);
  if (h.service().job_running()) {
    EXPECT_EQ(h.post("/api/iterations", "")->status, 409);
    EXPECT_EQ(h.rate(0, 1, 3, "busy")->status, 409);
    EXPECT_EQ(h.get("/api/pairs/pending")->status, 409);
    EXPECT_EQ(body(h.get("/api/iterations/current")).at("phase"), "running");
  } else {
    ADD_FAILURE() << "job finished before the conflict checks ran";
  }
  h.service().wait_for_job();
  EXPECT_EQ(body(h.get("/api/iterations/current")).at("phase"), "done");
}

TEST(Service, FinishedPipelineRefusesWork) {
  TempDir dir("svc_done");
  prepare_done(dir.path(), service_config(4));
  Harness h(dir.path());
  EXPECT_EQ(h.post("/api/iterations", "")->status, 409);
  EXPECT_EQ(h.rate(0, 1, 3, "late")->status, 409);
  EXPECT_EQ(body(h.get("/api/pairs/pending")), nlohmann::json::array());
  EXPECT_EQ(h.get("/api/companies/" + synth().corpus.companies()[0].company_id +
                  "/predictions")->status,
            200);
}
