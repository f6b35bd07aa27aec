// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "simlabel/simlabel.hpp"

namespace {

using namespace simlabel;
namespace fs = std::filesystem;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return 3;
    case ErrorKind::NotFound: return 4;
    case ErrorKind::Conflict: return 5;
    case ErrorKind::Corrupt: return 6;
    case ErrorKind::Io: return 7;
    case ErrorKind::Diverged: return 8;
    case ErrorKind::StaleIndex: return 9;
    case ErrorKind::Unavailable: return 10;
  }
  return 1;
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Corrupt, path.string() + ": " + e.what());
  }
}

void emit(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    write_file_atomic(out, text);
  }
}

NoiseProfile parse_profile(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      v.push_back(std::stod(part));
    } catch (const std::exception&) {
      fail(ErrorKind::InvalidArgument, "bad profile value '" + part + "'");
    }
  }
  require(v.size() == 3, "profile needs three values: exact,incorrect,partial");
  NoiseProfile p{v[0], v[1], v[2]};
  p.validate();
  return p;
}

std::string profile_summary(const Corpus& corpus) {
  std::map<NoiseClass, std::size_t> counts;
  std::size_t unlabeled = 0;
  for (const auto& c : corpus.companies()) {
    if (c.gold_tags) {
      ++counts[classify_noise(c)];
    } else {
      ++unlabeled;
    }
  }
  std::ostringstream out;
  for (auto cls : kNoiseClasses) out << to_string(cls) << "=" << counts[cls] << " ";
  out << "no_gold=" << unlabeled;
  return out.str();
}

Lsm load_ground_truth(const fs::path& corpus_dir) {
  const auto path = corpus_dir / "ground_truth_lsm.json";
  if (!fs::exists(path)) {
    fail(ErrorKind::NotFound, "simulated oracle needs " + path.string());
  }
  return lsm_from_json(read_json(path));
}

void print_status(const StateStore::Loaded& l) {
  const auto& s = l.state;
  nlohmann::ordered_json out;
  out["round"] = s.round;
  out["phase"] = to_string(s.phase);
  out["step"] = s.step;
  out["oracle"] = l.oracle;
  out["sme_cells"] = s.lsm.sme_sourced_count();
  out["pending_queue"] = s.awaiting_ratings() ? s.queue.size() : 0;
  out["grid_cursor"] = s.grid_cursor;
  out["ladder_rung"] = s.ladder_rung;
  out["history"] = nlohmann::ordered_json::array();
  for (const auto& h : s.history) out["history"].push_back(to_json(h));
  out["attempts"] = s.attempts.size();
  std::cout << out.dump(2) << "\n";
}

std::unique_ptr<RatingOracle> make_oracle(const std::string& kind, const fs::path& corpus_dir,
                                          double jitter, std::uint64_t seed,
                                          const StateStore& store) {
  if (kind == "simulated") {
    return std::make_unique<SimulatedOracle>(load_ground_truth(corpus_dir), jitter, seed);
  }
  if (kind == "live") return std::make_unique<LiveOracle>(store);
  fail(ErrorKind::InvalidArgument, "oracle must be simulated or live, not '" + kind + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"simlabel: noisy-label classification by semantic similarity"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  int n_tags = 12, n_companies = 600;
  std::string profile_text = "0.26,0.24,0.50";
  std::uint64_t seed = 42;
  std::string out_dir;
  double benchmark = 0.0;
  synth->add_option("--tags", n_tags, "number of tags")->capture_default_str();
  synth->add_option("--companies", n_companies, "number of companies")->capture_default_str();
  synth->add_option("--profile", profile_text, "exact,incorrect,partial fractions")
      ->capture_default_str();
  synth->add_option("--seed", seed)->capture_default_str();
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--benchmark", benchmark,
                    "also write train/ and benchmark/ splits with this held-out fraction");

  // validate
  auto* validate = app.add_subcommand("validate", "check a corpus");
  std::string tags_file, companies_file;
  validate->add_option("--tags", tags_file)->required();
  validate->add_option("--companies", companies_file)->required();

  // select-pairs
  auto* select = app.add_subcommand("select-pairs", "choose the initial pairs to rate");
  std::string lsm_file, out_file;
  double fraction = 0.15;
  select->add_option("--lsm", lsm_file, "all-unrated LSM file")->required();
  select->add_option("--fraction", fraction)->capture_default_str();
  select->add_option("--seed", seed)->capture_default_str();
  select->add_option("--out", out_file, "output file (default stdout)");

  // triplets
  auto* triplets = app.add_subcommand("triplets", "expand a rated LSM into triplets");
  std::string corpus_dir;
  std::size_t x = 8;
  bool no_self = false;
  triplets->add_option("--lsm", lsm_file)->required();
  triplets->add_option("--corpus", corpus_dir)->required();
  triplets->add_option("--x", x, "companies per stratum")->capture_default_str();
  triplets->add_option("--seed", seed)->capture_default_str();
  triplets->add_flag("--no-self", no_self, "omit self anchors");
  triplets->add_option("--out", out_file)->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train the encoder");
  std::string triplets_file, ckpt_file;
  TrainConfig tcfg;
  TokenizerConfig tokenizer;
  std::string optimizer = "adam";
  train_cmd->add_option("--triplets", triplets_file)->required();
  train_cmd->add_option("--out", ckpt_file)->required();
  train_cmd->add_option("--lr", tcfg.learning_rate)->capture_default_str();
  train_cmd->add_option("--epochs", tcfg.epochs)->capture_default_str();
  train_cmd->add_option("--batch", tcfg.batch_size)->capture_default_str();
  train_cmd->add_option("--dim", tcfg.dim)->capture_default_str();
  train_cmd->add_option("--patience", tcfg.patience)->capture_default_str();
  train_cmd->add_option("--seed", tcfg.seed)->capture_default_str();
  train_cmd->add_option("--optimizer", optimizer, "adam or gd")->capture_default_str();
  train_cmd->add_option("--vocab", tokenizer.vocab_size)->capture_default_str();
  std::string warm_file;
  train_cmd->add_option("--warm-start", warm_file, "checkpoint to continue from");

  // infer
  auto* infer = app.add_subcommand("infer", "rank tags for every company");
  int k = kDefaultTopK;
  infer->add_option("--ckpt", ckpt_file)->required();
  infer->add_option("--corpus", corpus_dir)->required();
  infer->add_option("--k", k)->capture_default_str();
  infer->add_option("--out", out_file)->required();

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "score assignments against gold tags");
  std::string assignments_file;
  bool baseline = false;
  evaluate_cmd->add_option("--assignments", assignments_file)->required();
  evaluate_cmd->add_option("--corpus", corpus_dir)->required();
  evaluate_cmd->add_option("--k", k)->capture_default_str();
  evaluate_cmd->add_option("--out", out_file, "report file (default stdout)");
  evaluate_cmd->add_flag("--baseline", baseline, "include the noisy-label baseline");

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "run the iterative loop");
  pipeline->require_subcommand(1);
  std::string state_dir, config_file, oracle_kind = "simulated";
  double jitter = 0.0;
  std::size_t max_steps = 0;
  auto* run = pipeline->add_subcommand("run", "start a new run");
  run->add_option("--corpus", corpus_dir)->required();
  run->add_option("--config", config_file, "pipeline config JSON");
  run->add_option("--oracle", oracle_kind, "simulated or live")->capture_default_str();
  run->add_option("--state", state_dir)->required();
  run->add_option("--jitter", jitter, "simulated rating jitter probability");
  run->add_option("--max-steps", max_steps, "stop after this many steps (0: no limit)");
  auto* resume = pipeline->add_subcommand("resume", "continue a run");
  resume->add_option("--state", state_dir)->required();
  resume->add_option("--corpus", corpus_dir, "override the recorded corpus directory");
  resume->add_option("--jitter", jitter);
  resume->add_option("--max-steps", max_steps);
  auto* status = pipeline->add_subcommand("status", "show the latest state");
  status->add_option("--state", state_dir)->required();

  // serve
  auto* serve = app.add_subcommand("serve", "HTTP API over a state directory");
  int port = -1;
  std::string host = "127.0.0.1";
  serve->add_option("--state", state_dir)->required();
  serve->add_option("--corpus", corpus_dir)->required();
  serve->add_option("--port", port, "port (default $SIMLABEL_PORT or 8080)");
  serve->add_option("--host", host)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      const auto profile = parse_profile(profile_text);
      const auto syn = generate_synthetic(n_tags, n_companies, profile, seed);
      save_corpus(syn.corpus, out_dir);
      const auto truth = to_json(syn.ground_truth).dump() + "\n";
      write_file_atomic(fs::path(out_dir) / "ground_truth_lsm.json", truth);
      if (benchmark > 0.0) {
        const auto split = split_benchmark(syn.corpus, benchmark, derive_seed(seed, 0xbeULL));
        for (const auto& w : split.warnings) std::cerr << "warning: " << w << "\n";
        save_corpus(split.train, fs::path(out_dir) / "train");
        save_corpus(split.benchmark, fs::path(out_dir) / "benchmark");
        write_file_atomic(fs::path(out_dir) / "train" / "ground_truth_lsm.json", truth);
      }
      std::cout << profile_summary(syn.corpus) << "\n";
    } else if (validate->parsed()) {
      const auto corpus = load_corpus(tags_file, companies_file);
      std::cout << "ok: " << corpus.n() << " tags, " << corpus.companies().size()
                << " companies; " << profile_summary(corpus) << "\n";
    } else if (select->parsed()) {
      const auto lsm = lsm_from_json(read_json(lsm_file));
      nlohmann::json out = nlohmann::json::array();
      for (const auto& p : select_initial_pairs(lsm, fraction, seed)) out.push_back({p.i, p.j});
      emit(out_file, out.dump() + "\n");
    } else if (triplets->parsed()) {
      const auto lsm = lsm_from_json(read_json(lsm_file));
      const auto corpus = load_corpus_dir(corpus_dir);
      std::vector<std::string> warnings;
      const auto set = build_training_set(lsm, corpus, {x, !no_self, seed}, &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
      emit(out_file, triplets_jsonl(set));
      std::cerr << set.size() << " triplets\n";
    } else if (train_cmd->parsed()) {
      if (optimizer == "gd") {
        tcfg.optimizer = Optimizer::GradientDescent;
      } else if (optimizer != "adam") {
        fail(ErrorKind::InvalidArgument, "optimizer must be adam or gd");
      }
      const auto set = load_triplets(triplets_file);
      std::optional<EncoderParams> warm;
      if (!warm_file.empty()) warm = load_checkpoint(warm_file, tokenizer).params;
      const auto result = train(set, tcfg, tokenizer, std::move(warm),
                                [](const EpochRecord& r) {
                                  std::cerr << "epoch " << r.epoch << " train "
                                            << r.train_loss << " validation "
                                            << r.validation_loss << "\n";
                                });
      save_checkpoint(result.params, tokenizer, ckpt_file);
      std::cerr << "best epoch " << result.best_epoch << "\n";
    } else if (infer->parsed()) {
      const auto ck = load_checkpoint(ckpt_file);
      const auto corpus = load_corpus_dir(corpus_dir);
      const HashingEncoder enc(ck.params, ck.tokenizer);
      const auto index = build_itd_index(enc, corpus);
      std::string text;
      for (const auto& a : rank_corpus(index, enc, corpus)) text += to_json(a, k).dump() + "\n";
      emit(out_file, text);
    } else if (evaluate_cmd->parsed()) {
      const auto corpus = load_corpus_dir(corpus_dir);
      std::vector<RankedAssignment> assignments;
      detail::for_each_jsonl(assignments_file, [&](const nlohmann::json& j, std::size_t) {
        assignments.push_back(assignment_from_json(j));
      });
      auto report = to_json(evaluate(assignments, corpus, k));
      if (baseline) report["noisy_baseline"] = to_json(noisy_baseline(corpus));
      emit(out_file, report.dump(2) + "\n");
    } else if (run->parsed()) {
      const auto cfg = config_file.empty() ? PipelineConfig{}
                                           : pipeline_config_from_json(read_json(config_file));
      const auto corpus = load_corpus_dir(corpus_dir);
      StateStore store(state_dir);
      auto oracle = make_oracle(oracle_kind, corpus_dir, jitter, cfg.seed, store);
      store.init(cfg, oracle_kind, corpus_dir);
      Pipeline pl(corpus, cfg, *oracle, &store);
      auto s = pl.bootstrap();
      s = pl.run(std::move(s), max_steps ? std::optional<std::size_t>(max_steps) : std::nullopt);
      print_status(store.load());
    } else if (resume->parsed()) {
      StateStore store(state_dir);
      auto loaded = store.load();
      if (corpus_dir.empty()) corpus_dir = loaded.corpus_dir;
      require(!corpus_dir.empty(), "no corpus recorded; pass --corpus");
      const auto corpus = load_corpus_dir(corpus_dir);
      auto oracle = make_oracle(loaded.oracle, corpus_dir, jitter, loaded.config.seed, store);
      Pipeline pl(corpus, loaded.config, *oracle, &store);
      pl.run(std::move(loaded.state),
             max_steps ? std::optional<std::size_t>(max_steps) : std::nullopt);
      print_status(store.load());
    } else if (status->parsed()) {
      StateStore store(state_dir);
      print_status(store.load());
    } else if (serve->parsed()) {
      if (port < 0) {
        const char* env = std::getenv("SIMLABEL_PORT");
        port = env ? std::atoi(env) : 8080;
      }
      const char* token = std::getenv("SIMLABEL_TOKEN");
      Service service(state_dir, load_corpus_dir(corpus_dir), token ? token : "");
      const int bound = service.bind(host, port);
      std::cerr << "listening on " << host << ":" << bound << "\n";
      service.listen_after_bind();
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
