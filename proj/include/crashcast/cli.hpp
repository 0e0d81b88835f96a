// Copyright 2026 The Crashcast Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CRASHCAST_CLI_HPP_
#define CRASHCAST_CLI_HPP_

// Command-line front end: gen-data, train and eval. Each run writes its
// outputs atomically plus a manifest with the resolved configuration,
// seeds and content hashes.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "crashcast/autodiff.hpp"
#include "crashcast/error.hpp"
#include "crashcast/features.hpp"
#include "crashcast/losses.hpp"
#include "crashcast/random.hpp"
#include "crashcast/riskmodel.hpp"
#include "crashcast/roadnet.hpp"
#include "crashcast/scenario.hpp"
#include "crashcast/traineval.hpp"
#include "json.hpp"

namespace crashcast::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

/// Bad flags, bad config or unusable inputs; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- file helpers ----------------------------------------------------------

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string content_hash(const std::string& bytes) { return hex64(fnv1a64(bytes)); }

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
inline void write_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, "cannot write '" + tmp + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::kIo, "short write to '" + tmp + "'");
  }
  fs::rename(tmp, path);
}

inline void check_fresh(const std::vector<std::string>& paths, bool force) {
  if (force) return;
  for (const auto& p : paths)
    if (fs::exists(p)) throw UsageError("'" + p + "' exists; pass --force to overwrite");
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---- option plumbing -------------------------------------------------------

/// Tracks which flags a subcommand has so a JSON config can fill the ones
/// not given on the command line. Config keys are flag names with dashes
/// replaced by underscores.
class Options {
 public:
  explicit Options(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "JSON file with default flag values");
  }

  template <class T>
  CLI::Option* add(const std::string& flag, T& var, const std::string& help) {
    auto* opt = app_->add_option("--" + flag, var, help)->capture_default_str();
    entries_.push_back({key(flag), opt, [&var](const nlohmann::json& j) { var = j.get<T>(); },
                        [&var]() { return nlohmann::json(var); }});
    return opt;
  }

  CLI::Option* flag(const std::string& name, bool& var, const std::string& help) {
    auto* opt = app_->add_flag("--" + name, var, help);
    entries_.push_back({key(name), opt, [&var](const nlohmann::json& j) { var = j.get<bool>(); },
                        [&var]() { return nlohmann::json(var); }});
    return opt;
  }

  bool given(const std::string& flag) const {
    for (const auto& e : entries_)
      if (e.key == key(flag)) return e.option->count() > 0;
    return false;
  }

  /// Applies CRASHCAST_SEED and then the config file to every flag absent
  /// from the command line.
  void resolve(std::uint64_t& seed) {
    if (!given("seed"))
      if (const char* env = std::getenv("CRASHCAST_SEED"); env && *env) {
        try {
          std::size_t used = 0;
          const auto v = std::stoull(env, &used);
          if (used != std::string(env).size()) throw std::invalid_argument(env);
          seed = v;
        } catch (const std::exception&) {
          throw UsageError("CRASHCAST_SEED must be a nonnegative integer, got '" + std::string(env) + "'");
        }
      }
    if (config_path_.empty()) return;
    nlohmann::json cfg;
    try {
      cfg = nlohmann::json::parse(read_file(config_path_));
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("config '" + config_path_ + "': " + e.what());
    }
    if (!cfg.is_object()) throw UsageError("config '" + config_path_ + "' must hold a JSON object");
    for (const auto& [k, v] : cfg.items()) {
      auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.key == k; });
      if (it == entries_.end()) throw UsageError("config '" + config_path_ + "': unknown key '" + k + "'");
      if (it->option->count() > 0) continue;
      try {
        it->set(v);
      } catch (const nlohmann::json::exception&) {
        throw UsageError("config '" + config_path_ + "': bad value for '" + k + "'");
      }
    }
  }

  /// Resolved values, for the manifest.
  Json snapshot() const {
    Json j = Json::object();
    for (const auto& e : entries_) j[e.key] = e.get();
    return j;
  }

 private:
  struct Entry {
    std::string key;
    CLI::Option* option;
    std::function<void(const nlohmann::json&)> set;
    std::function<nlohmann::json()> get;
  };

  static std::string key(std::string flag) {
    std::replace(flag.begin(), flag.end(), '-', '_');
    return flag;
  }

  CLI::App* app_;
  std::string config_path_;
  std::vector<Entry> entries_;
};

/// Runs fn(i) for i in [0, n) on `jobs` threads. Results land by index, so
/// the merge order never depends on scheduling; the lowest-index failure is
/// rethrown.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&](std::size_t w) {
    for (std::size_t i = w; i < n; i += jobs) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (jobs == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w) pool.emplace_back(worker, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct Manifest {
  std::string command;
  Json config;
  std::uint64_t seed = 0;
  Json inputs = Json::array();
  Json outputs = Json::array();
  std::string started_at;

  void input(const std::string& path, const std::string& bytes) {
    inputs.push_back({{"path", path}, {"fnv1a64", content_hash(bytes)}});
  }
  void output(const std::string& path, const std::string& bytes) {
    outputs.push_back({{"path", path}, {"fnv1a64", content_hash(bytes)}});
  }

  /// Timestamps sit in their own object so byte comparisons can drop it.
  std::string dump() const {
    Json j;
    j["command"] = command;
    j["config"] = config;
    j["seeds"] = {{"seed", seed}};
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["timestamps"] = {{"started_at", started_at}, {"finished_at", utc_now()}};
    return j.dump(2) + "\n";
  }
};

// ---- shared model setup ----------------------------------------------------

struct ModelBundle {
  features::FeatureConfig features;
  riskmodel::ModelConfig model;
};

inline Json bundle_to_json(const ModelBundle& b) {
  Json j;
  j["model"] = riskmodel::to_json(b.model);
  j["features"] = {{"dim", b.features.dim},
                   {"max_objects", b.features.max_objects},
                   {"tau_text", b.features.tau_text},
                   {"visual_noise", b.features.visual_noise},
                   {"text_noise", b.features.text_noise},
                   {"velocity_sign", features::to_string(b.features.velocity_sign)},
                   {"seed", b.features.seed}};
  return j;
}

inline ModelBundle bundle_from_json(const nlohmann::json& j) {
  try {
    ModelBundle b;
    b.model = riskmodel::model_config_from_json(j.at("model"));
    const auto& f = j.at("features");
    b.features.dim = f.at("dim").get<std::size_t>();
    b.features.max_objects = f.at("max_objects").get<std::size_t>();
    b.features.tau_text = f.at("tau_text").get<double>();
    b.features.visual_noise = f.at("visual_noise").get<double>();
    b.features.text_noise = f.at("text_noise").get<double>();
    b.features.velocity_sign = features::parse_velocity_sign(f.at("velocity_sign").get<std::string>());
    b.features.seed = f.at("seed").get<std::uint64_t>();
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("model config: ") + e.what());
  }
}

inline std::vector<scenario::ScenarioRecord> load_records(const std::string& path, std::string& bytes) {
  if (!fs::exists(path)) throw UsageError("data file '" + path + "' does not exist");
  bytes = read_file(path);
  std::istringstream in(bytes);
  return scenario::read_jsonl(in);
}

enum class Split { kTrain, kTest, kAll };

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  if (s == "all") return Split::kAll;
  throw UsageError("--split must be train, test or all");
}

inline bool in_split(const std::string& id, Split s) {
  return s == Split::kAll || (s == Split::kTest) == traineval::is_test_id(id);
}

inline std::vector<features::Sample> build_samples(const std::vector<const scenario::ScenarioRecord*>& recs,
                                                   const features::Embedder& emb, std::size_t jobs) {
  std::vector<features::Sample> out(recs.size());
  parallel_for(recs.size(), jobs, [&](std::size_t i) { out[i] = features::build_sample(*recs[i], emb); });
  return out;
}

// ---- commands --------------------------------------------------------------

struct GenDataArgs {
  std::string network, out;
  std::size_t count = 100;
  double positive_ratio = 0.5;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  double traffic_count = 3.0;
  bool force = false;
};

inline int run_gen_data(const GenDataArgs& a, const Json& config, std::ostream& log) {
  if (a.out.empty()) throw UsageError("--out is required");
  if (a.network.empty()) throw UsageError("--network is required");
  if (!(a.positive_ratio >= 0.0 && a.positive_ratio <= 1.0)) throw UsageError("--positive-ratio must lie in [0, 1]");
  if (a.jobs < 1) throw UsageError("--jobs must be >= 1");
  if (!fs::exists(a.network)) throw UsageError("network file '" + a.network + "' does not exist");
  const std::string manifest_path = a.out + ".manifest.json";
  check_fresh({a.out, manifest_path}, a.force);

  Manifest m{"gen-data", config, a.seed, Json::array(), Json::array(), utc_now()};
  const std::string net_bytes = read_file(a.network);
  m.input(a.network, net_bytes);
  roadnet::RoadGraph network;
  try {
    network = roadnet::parse_network(net_bytes);
  } catch (const Error& e) {
    throw UsageError("network '" + a.network + "': " + e.what());
  }
  scenario::ScenarioConfig cfg;
  cfg.traffic_count = a.traffic_count;

  std::vector<scenario::ScenarioRecord> records(a.count);
  parallel_for(a.count, a.jobs, [&](std::size_t i) {
    records[i] = scenario::generate_indexed(network, cfg, a.seed, i, scenario::is_positive_index(i, a.positive_ratio))
                     .record;
  });
  std::ostringstream out;
  scenario::write_jsonl(out, records);
  const std::string bytes = out.str();
  write_atomic(a.out, bytes);
  m.output(a.out, bytes);
  write_atomic(manifest_path, m.dump());
  std::size_t positives = 0;
  for (const auto& r : records) positives += r.positive;
  log << "wrote " << records.size() << " scenarios (" << positives << " positive) to " << a.out << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data, out, resume, log;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  double clip_norm = 5.0;
  std::size_t dim = 32;
  std::size_t objects = 6;
  std::string velocity_sign = "as-printed";
  std::size_t jobs = 1;
  bool force = false;
};

inline int run_train(const TrainArgs& a, const Json& config, std::ostream& log) {
  if (a.out.empty()) throw UsageError("--out is required");
  if (a.data.empty()) throw UsageError("--data is required");
  if (a.jobs < 1) throw UsageError("--jobs must be >= 1");
  const std::string log_path = a.log.empty() ? a.out + ".log.csv" : a.log;
  const std::string steps_path = a.out + ".steps.csv", val_path = a.out + ".val.csv";
  const std::string model_path = a.out + ".model.json", manifest_path = a.out + ".manifest.json";
  check_fresh({a.out, log_path, steps_path, val_path, model_path, manifest_path}, a.force);

  ModelBundle bundle;
  bundle.features.dim = a.dim;
  bundle.features.max_objects = a.objects;
  bundle.features.seed = a.seed;
  bundle.features.velocity_sign = features::parse_velocity_sign(a.velocity_sign);
  bundle.model.dim = a.dim;
  bundle.model.objects = a.objects;
  bundle.model.seed = a.seed;
  traineval::TrainConfig tcfg;
  tcfg.epochs = a.epochs;
  tcfg.seed = a.seed;
  tcfg.batch_size = a.batch_size;
  tcfg.learning_rate = a.learning_rate;
  tcfg.clip_norm = a.clip_norm;
  try {
    bundle.features.validate();
    bundle.model.validate();
    tcfg.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }

  Manifest m{"train", config, a.seed, Json::array(), Json::array(), utc_now()};
  std::string data_bytes;
  const auto records = load_records(a.data, data_bytes);
  m.input(a.data, data_bytes);
  std::vector<const scenario::ScenarioRecord*> train_recs, val_recs;
  for (const auto& r : records) (traineval::is_test_id(r.id) ? val_recs : train_recs).push_back(&r);
  if (train_recs.empty()) throw UsageError("no training scenarios in '" + a.data + "'");

  traineval::TrainState state = traineval::TrainState::fresh(bundle.model);
  if (!a.resume.empty()) {
    if (!fs::exists(a.resume)) throw UsageError("checkpoint '" + a.resume + "' does not exist");
    m.input(a.resume, read_file(a.resume));
    try {
      state = traineval::from_checkpoint(autodiff::read_checkpoint(a.resume), bundle.model);
    } catch (const Error& e) {
      throw UsageError("resume: " + std::string(e.what()));
    }
  }

  const features::Embedder emb(bundle.features);
  const auto train_set = build_samples(train_recs, emb, a.jobs);
  const auto val_set = build_samples(val_recs, emb, a.jobs);
  losses::LossConfig lcfg;
  lcfg.fps = records.front().fps;

  std::ostringstream steps;
  steps << "step,L1,L2,L3,L\n";
  std::map<std::size_t, std::size_t> epoch_end;  // epoch -> last step
  const auto rows = traineval::train(train_set, val_set, state, bundle.model, lcfg, tcfg,
                                     [&](std::size_t epoch, std::size_t step, const losses::LossValues& v) {
                                       epoch_end[epoch] = step;
                                       steps << step << ',' << fmt(v.l1) << ',' << fmt(v.l2) << ',' << fmt(v.l3)
                                             << ',' << fmt(v.total) << "\n";
                                     });
  std::ostringstream epochs, val;
  epochs << "step,L1,L2,L3,L\n";
  val << "step,L1,L2,L3,L\n";
  for (const auto& r : rows) {
    const std::size_t at = epoch_end.at(r.epoch);
    epochs << at << ',' << fmt(r.train.l1) << ',' << fmt(r.train.l2) << ',' << fmt(r.train.l3) << ','
           << fmt(r.train.total) << "\n";
    if (r.validation)
      val << at << ',' << fmt(r.validation->l1) << ',' << fmt(r.validation->l2) << ',' << fmt(r.validation->l3)
          << ',' << fmt(r.validation->total) << "\n";
    log << "epoch " << r.epoch << ": L=" << fmt(r.train.total) << "\n";
  }

  const std::string ckpt_tmp = a.out + ".tmp";
  autodiff::write_checkpoint(ckpt_tmp, traineval::to_checkpoint(state));
  const std::string ckpt_bytes = read_file(ckpt_tmp);
  fs::rename(ckpt_tmp, a.out);
  m.output(a.out, ckpt_bytes);
  const std::pair<std::string, std::string> files[] = {{model_path, bundle_to_json(bundle).dump(2) + "\n"},
                                                       {log_path, epochs.str()},
                                                       {steps_path, steps.str()},
                                                       {val_path, val.str()}};
  for (const auto& [path, bytes] : files) {
    write_atomic(path, bytes);
    m.output(path, bytes);
  }
  write_atomic(manifest_path, m.dump());
  log << "trained " << train_set.size() << " scenarios for " << rows.size() << " epochs; checkpoint " << a.out
      << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, data, out, curves, model_config, split = "test";
  std::optional<double> threshold;
  std::size_t jobs = 1;
  bool force = false;
};

inline Json report_to_json(const traineval::EvalReport& r) {
  Json j;
  j["ap"] = r.ap;
  j["mtta"] = r.mtta;
  j["mtta_definition"] = "mean over thresholds 0.01..0.99 of the mean TTA of triggering positives";
  j["threshold"] = r.threshold ? Json(*r.threshold) : Json(nullptr);
  j["sweep"] = Json::array();
  for (const auto& s : r.sweep)
    j["sweep"].push_back({{"threshold", s.threshold},
                          {"triggered_positives", s.triggered_positives},
                          {"triggered_negatives", s.triggered_negatives},
                          {"mean_tta", s.mean_tta ? Json(*s.mean_tta) : Json(nullptr)}});
  j["videos"] = Json::array();
  for (const auto& v : r.videos)
    j["videos"].push_back({{"id", v.id},
                           {"label", v.label},
                           {"accident_frame", v.accident_frame ? Json(*v.accident_frame) : Json(nullptr)},
                           {"score", v.score},
                           {"trigger_frame", v.trigger ? Json(*v.trigger) : Json(nullptr)},
                           {"tta", v.tta ? Json(*v.tta) : Json(nullptr)}});
  return j;
}

inline int run_eval(const EvalArgs& a, const Json& config, std::ostream& log) {
  if (a.out.empty()) throw UsageError("--out is required");
  if (a.checkpoint.empty() || a.data.empty()) throw UsageError("--checkpoint and --data are required");
  if (a.threshold && !(*a.threshold >= 0.0 && *a.threshold <= 1.0)) throw UsageError("--threshold must lie in [0, 1]");
  if (a.jobs < 1) throw UsageError("--jobs must be >= 1");
  const Split split = parse_split(a.split);
  const std::string curves_path = a.curves.empty() ? a.out + ".curves.csv" : a.curves;
  const std::string manifest_path = a.out + ".manifest.json";
  const std::string model_path = a.model_config.empty() ? a.checkpoint + ".model.json" : a.model_config;
  check_fresh({a.out, curves_path, manifest_path}, a.force);
  if (!fs::exists(a.checkpoint)) throw UsageError("checkpoint '" + a.checkpoint + "' does not exist");
  if (!fs::exists(model_path)) throw UsageError("model config '" + model_path + "' does not exist");

  Manifest m{"eval", config, 0, Json::array(), Json::array(), utc_now()};
  const std::string model_bytes = read_file(model_path), ckpt_bytes = read_file(a.checkpoint);
  m.input(model_path, model_bytes);
  m.input(a.checkpoint, ckpt_bytes);
  nlohmann::json model_json;
  try {
    model_json = nlohmann::json::parse(model_bytes);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("model config '" + model_path + "': " + e.what());
  }
  const ModelBundle bundle = bundle_from_json(model_json);
  m.seed = bundle.model.seed;
  if (bundle.features.dim != bundle.model.dim || bundle.features.max_objects != bundle.model.objects)
    throw UsageError("model config: feature and model shapes disagree");
  riskmodel::ModelParams params = riskmodel::init_params(bundle.model);
  try {
    riskmodel::restore(params, autodiff::read_checkpoint(a.checkpoint));
  } catch (const Error& e) {
    throw UsageError("checkpoint '" + a.checkpoint + "' does not match the model config: " + e.what());
  }

  std::string data_bytes;
  const auto records = load_records(a.data, data_bytes);
  m.input(a.data, data_bytes);
  std::vector<const scenario::ScenarioRecord*> chosen;
  for (const auto& r : records)
    if (in_split(r.id, split)) chosen.push_back(&r);
  if (chosen.empty()) throw UsageError("no scenarios in the '" + a.split + "' split");
  const double fps = chosen.front()->fps;
  for (const auto* r : chosen)
    if (r->fps != fps) throw UsageError("scenarios disagree on fps");

  const features::Embedder emb(bundle.features);
  std::vector<traineval::VideoCurve> curves(chosen.size());
  parallel_for(chosen.size(), a.jobs, [&](std::size_t i) {
    const auto s = features::build_sample(*chosen[i], emb);
    curves[i] = {s.id, s.label, s.accident_frame, riskmodel::predict(s, params, bundle.model)};
  });
  traineval::EvalReport report;
  try {
    report = traineval::evaluate(curves, fps, a.threshold);
  } catch (const Error& e) {
    throw UsageError(std::string("evaluation: ") + e.what());
  }

  std::ostringstream csv;
  csv << "video_id,frame,u\n";
  for (const auto& c : curves)
    for (std::size_t t = 0; t < c.curve.size(); ++t) csv << c.id << ',' << t + 1 << ',' << fmt(c.curve[t]) << "\n";
  const std::string report_bytes = report_to_json(report).dump(2) + "\n";
  write_atomic(a.out, report_bytes);
  m.output(a.out, report_bytes);
  write_atomic(curves_path, csv.str());
  m.output(curves_path, csv.str());
  write_atomic(manifest_path, m.dump());
  log << "AP " << fmt(report.ap) << ", mTTA " << fmt(report.mtta) << " s over " << curves.size() << " videos\n";
  return kExitOk;
}

// ---- entry point -----------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"crashcast: synthetic accident scenarios and a risk anticipation model", "crashcast"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a JSON-lines scenario dataset");
  Options gen_opts(gen_cmd);
  gen_opts.add("network", gen.network, "Road network XML (negatives run on it)");
  gen_opts.add("count", gen.count, "Number of scenarios");
  gen_opts.add("positive-ratio", gen.positive_ratio, "Fraction of accident scenarios");
  gen_opts.add("seed", gen.seed, "Random seed");
  gen_opts.add("traffic-count", gen.traffic_count, "Expected background vehicles per clip");
  gen_opts.add("jobs", gen.jobs, "Worker threads");
  gen_opts.add("out", gen.out, "Output .jsonl path");
  gen_opts.flag("force", gen.force, "Overwrite existing outputs");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train the risk model");
  Options tr_opts(train_cmd);
  tr_opts.add("data", tr.data, "Scenario dataset (.jsonl)");
  tr_opts.add("epochs", tr.epochs, "Total epochs (including resumed ones)");
  tr_opts.add("seed", tr.seed, "Random seed for features, init and shuffling");
  tr_opts.add("batch-size", tr.batch_size, "Videos per mini-batch");
  tr_opts.add("learning-rate", tr.learning_rate, "Adam step size");
  tr_opts.add("clip-norm", tr.clip_norm, "Global gradient norm limit");
  tr_opts.add("dim", tr.dim, "Embedding width F");
  tr_opts.add("objects", tr.objects, "Object slots O");
  tr_opts.add("velocity-sign", tr.velocity_sign, "Relative velocity sign: as-printed or negated");
  tr_opts.add("resume", tr.resume, "Checkpoint to continue from");
  tr_opts.add("log", tr.log, "Per-epoch loss CSV (default <out>.log.csv)");
  tr_opts.add("jobs", tr.jobs, "Worker threads for feature extraction");
  tr_opts.add("out", tr.out, "Checkpoint path");
  tr_opts.flag("force", tr.force, "Overwrite existing outputs");

  EvalArgs ev;
  double threshold = std::nan("");  // unset unless given
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  Options ev_opts(eval_cmd);
  ev_opts.add("checkpoint", ev.checkpoint, "Checkpoint from train");
  ev_opts.add("model-config", ev.model_config, "Model config JSON (default <checkpoint>.model.json)");
  ev_opts.add("data", ev.data, "Scenario dataset (.jsonl)");
  ev_opts.add("split", ev.split, "train, test or all");
  ev_opts.add("threshold", threshold, "Decision level for per-video trigger frames");
  ev_opts.add("jobs", ev.jobs, "Worker threads");
  ev_opts.add("out", ev.out, "Report JSON path");
  ev_opts.add("curves", ev.curves, "Risk curve CSV (default <out>.curves.csv)");
  ev_opts.flag("force", ev.force, "Overwrite existing outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) {
      gen_opts.resolve(gen.seed);
      return run_gen_data(gen, gen_opts.snapshot(), out);
    }
    if (*train_cmd) {
      tr_opts.resolve(tr.seed);
      return run_train(tr, tr_opts.snapshot(), out);
    }
    std::uint64_t unused_seed = 0;
    ev_opts.resolve(unused_seed);
    if (!std::isnan(threshold)) ev.threshold = threshold;
    return run_eval(ev, ev_opts.snapshot(), out);
  } catch (const UsageError& e) {
    err << "crashcast: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "crashcast: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::kMalformed:
      case ErrorKind::kInvalidValue:
      case ErrorKind::kShapeMismatch:
      case ErrorKind::kDanglingReference:
      case ErrorKind::kEmptyTerminals:
        return kExitUsage;
      default:
        return kExitRuntime;
    }
  } catch (const std::exception& e) {
    err << "crashcast: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace crashcast::cli

#endif  // CRASHCAST_CLI_HPP_
