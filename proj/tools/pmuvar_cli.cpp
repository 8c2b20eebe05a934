#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"

#include "pmuvar/corpus.hpp"
#include "pmuvar/decision_tree.hpp"
#include "pmuvar/hyperlab.hpp"
#include "pmuvar/pipeline.hpp"
#include "pmuvar/synthetic.hpp"
#include "pmuvar/training_set.hpp"
#include "pmuvar/http_api.hpp"

using namespace pmuvar;

namespace {

std::atomic<bool> interrupted{false};

void on_signal(int) { interrupted = true; }

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  return out;
}

// Raw PMU CSV -> physical channels at the model resolution, as a T x 4 matrix.
Eigen::MatrixXd load_series(const std::string& path, double rate_hz, double resolution_s) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open input '" + path + "'");
  const auto samples = parse_csv_stream(in);
  ChannelSeries raw;
  raw.reserve(samples.size());
  for (const auto& s : samples) raw.push_back(derive_channels(s));
  return to_matrix(coarse_grain(raw, rate_hz, resolution_s));
}

std::vector<LabeledFeatures> load_training(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open training set '" + path + "'");
  return read_training_csv(in);
}

void print_summary(const Pipeline& p, EventStore& store) {
  const auto snap = p.snapshot();
  std::cout << "ticks " << snap->ticks << ", events " << store.size() << ", refits " << snap->refits
            << ", max tick " << snap->tick_ms_max << " ms\n";
  for (const auto& e : store.events()) {
    const auto l = store.effective_label(e.event.id);
    std::cout << "  #" << e.event.id << ' ' << format_iso8601(e.event.start) << ' ' << e.event.triggers.to_string()
              << ' ' << (l.label ? std::string(to_string(*l.label)) : "-") << '\n';
  }
}

int run_service(PipelineConfig cfg, bool hold) {
  auto store = cfg.persistence_dir.empty() ? std::make_shared<EventStore>()
                                           : std::make_shared<EventStore>(cfg.persistence_dir);
  Pipeline pipeline(cfg, store, load_classifier(cfg));
  std::unique_ptr<ApiServer> api;
  if (cfg.listen_port >= 0) {
    api = std::make_unique<ApiServer>(pipeline);
    const int port = api->start(cfg.listen_host, cfg.listen_port);
    std::cerr << "listening on http://" << cfg.listen_host << ':' << port << '\n';
  }
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  auto source = make_source(cfg);
  std::jthread agent([&](std::stop_token st) { pipeline.run(*source, st); });
  while (!pipeline.snapshot()->finished) {
    if (interrupted) agent.request_stop();
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  agent.join();
  print_summary(pipeline, *store);
  if (hold && api) {
    std::cerr << "input finished; serving until interrupted\n";
    while (!interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  return 0;
}

KeyValueConfig load_config(const std::string& path) {
  return path.empty() ? KeyValueConfig{} : KeyValueConfig::load(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PMU telemetry anomaly detection with rolling VAR models"};
  app.require_subcommand(1);

  std::string config_path;
  bool hold = false;
  auto* run = app.add_subcommand("run", "run the live pipeline from a config file");
  run->add_option("--config", config_path, "key = value config file")->required()->check(CLI::ExistingFile);
  run->add_flag("--hold", hold, "keep serving the API after the input ends");

  std::string replay_input;
  double replay_speed = 0.0;
  double replay_rate = 0.0;
  auto* replay = app.add_subcommand("replay", "replay a PMU CSV through the pipeline");
  replay->add_option("--input", replay_input, "PMU CSV file")->required()->check(CLI::ExistingFile);
  replay->add_option("--speed", replay_speed, "stream seconds per wall second; 0 runs unpaced");
  replay->add_option("--rate", replay_rate, "input sample rate in Hz (default: config input_rate_hz)");
  replay->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  replay->add_flag("--hold", hold, "keep serving the API after the input ends");

  std::string metric_name = "D1_retrain", tau_grid = "0.5,1,2,4,6,8,10,15,20", lab_input, lab_out, pairs_arg = "1:10,2:20";
  LabOptions lab;
  double lab_rate = 30.0;
  auto* hyper = app.add_subcommand("hyperlab", "retraining-error and drift experiments");
  hyper->add_option("--metric", metric_name, "D1_retrain, D2_drift or D1_lag_depth");
  hyper->add_option("--tau-grid", tau_grid, "comma separated window lengths in minutes");
  hyper->add_option("--pairs", pairs_arg, "p:tau pairs for D1_lag_depth");
  hyper->add_option("--replicates", lab.replicates, "replicates per cell");
  hyper->add_option("--seed", lab.seed, "experiment seed");
  hyper->add_option("--input", lab_input, "PMU CSV supplying ground-truth segments or the drift series")
      ->check(CLI::ExistingFile);
  hyper->add_option("--input-rate", lab_rate, "sample rate of --input in Hz");
  hyper->add_option("--resolution", lab.resolution_s, "model resolution in seconds");
  hyper->add_option("--out", lab_out, "report CSV (default stdout)");

  std::string train_path, eval_path, model_out;
  std::size_t folds = 0;
  TrainConfig tc;
  bool render = false;
  auto* classify = app.add_subcommand("classify", "train, cross-validate or evaluate the event classifier");
  classify->add_option("--train", train_path, "training CSV")->required()->check(CLI::ExistingFile);
  classify->add_option("--eval", eval_path, "labeled CSV to score the trained tree on")->check(CLI::ExistingFile);
  classify->add_option("--folds", folds, "k for stratified cross-validation");
  classify->add_option("--seed", tc.seed, "fold shuffle seed");
  classify->add_option("--max-depth", tc.max_depth, "maximum tree depth");
  classify->add_option("--min-leaf", tc.min_leaf, "minimum samples per leaf");
  classify->add_option("--save-model", model_out, "write the tree record (JSON)");
  classify->add_flag("--render", render, "print the tree");

  std::string synth_config, synth_out;
  auto* synth = app.add_subcommand("synth", "write a synthetic PMU CSV from scenario keys");
  synth->add_option("--config", synth_config, "scenario keys (duration_s, rate_hz, seed, event, ...)")
      ->required()
      ->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "CSV path")->required();

  CorpusConfig cc;
  std::uint64_t corpus_model_seed = 7;
  std::string corpus_out;
  auto* corpus = app.add_subcommand("corpus", "write a labeled synthetic training set");
  corpus->add_option("--events", cc.events, "number of events");
  corpus->add_option("--seed", cc.seed, "corpus seed");
  corpus->add_option("--model-seed", corpus_model_seed, "seed of the ambient model");
  corpus->add_option("--threshold", cc.threshold, "detector threshold used to cut events");
  corpus->add_option("--min-sigma", cc.min_sigma, "smallest magnitude in ambient sigmas");
  corpus->add_option("--max-sigma", cc.max_sigma, "largest magnitude in ambient sigmas");
  corpus->add_option("--out", corpus_out, "training CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return run_service(PipelineConfig::from_config(load_config(config_path)), hold);

    if (*replay) {
      KeyValueConfig kv = load_config(config_path);
      kv.set("input", "csv");
      kv.set("input_path", replay_input);
      kv.set("replay_speed", std::to_string(replay_speed));
      if (replay_rate > 0.0) kv.set("input_rate_hz", std::to_string(replay_rate));
      return run_service(PipelineConfig::from_config(kv), hold);
    }

    if (*hyper) {
      const Metric metric = parse_metric(metric_name);
      const auto grid = parse_double_list(tau_grid);
      Eigen::MatrixXd base;
      if (!lab_input.empty()) base = load_series(lab_input, lab_rate, lab.resolution_s);
      ExperimentReport report;
      if (metric == Metric::D1Retrain) {
        report = retrain_error_experiment(base, grid, lab);
      } else if (metric == Metric::D1LagDepth) {
        std::vector<std::pair<int, double>> pairs;
        std::istringstream ps(pairs_arg);
        for (std::string item; std::getline(ps, item, ',');) {
          const auto colon = item.find(':');
          if (colon == std::string::npos) throw ConfigError("pair '" + item + "' is not p:tau");
          pairs.emplace_back(std::stoi(item.substr(0, colon)), std::stod(item.substr(colon + 1)));
        }
        report = lag_depth_experiment(base, pairs, lab);
      } else {
        if (base.size() == 0) {
          const double max_tau = *std::max_element(grid.begin(), grid.end());
          const std::size_t n = 4 * tau_points(max_tau, lab.resolution_s);
          base = simulate(random_stable_model(lab.K, 1, lab.seed), n, derive_seed(lab.seed, 1));
        }
        report = drift_experiment(base, grid, lab.resolution_s);
      }
      if (lab_out.empty()) {
        report.write_csv(std::cout);
      } else {
        auto out = open_out(lab_out);
        report.write_csv(out);
      }
      const auto med = report.medians();
      for (std::size_t i = 0; i < med.size(); ++i) {
        std::cerr << to_string(report.metric) << " p=" << report.entries[i].p << " tau=" << report.entries[i].tau_minutes
                  << " median=" << med[i] << '\n';
      }
      return 0;
    }

    if (*classify) {
      const auto rows = load_training(train_path);
      if (rows.empty()) throw ValidationError("training set is empty");
      const Eigen::MatrixXd X = feature_matrix(rows);
      const auto y = label_vector(rows);
      if (folds > 0) {
        const auto cv = cross_validate(X, y, folds, tc);
        std::cout << folds << "-fold accuracy " << cv.mean_accuracy << '\n';
        std::cout << "confusion (rows true, columns predicted: spike drop step oscillatory)\n";
        for (const auto& r : cv.confusion) {
          for (auto c : r) std::cout << ' ' << c;
          std::cout << '\n';
        }
      }
      const DecisionTree tree = train_tree(X, y, tc);
      std::cout << "tree depth " << tree.depth() << ", leaves " << tree.leaves().size() << '\n';
      if (render) std::cout << tree.render(kFeatureNames);
      if (!eval_path.empty()) {
        const auto eval = load_training(eval_path);
        std::size_t correct = 0;
        for (const auto& r : eval) {
          correct += tree.predict(r.features.to_array()).predicted == static_cast<int>(r.label);
        }
        std::cout << "eval accuracy " << (eval.empty() ? 0.0 : static_cast<double>(correct) / eval.size()) << " on "
                  << eval.size() << " events\n";
      }
      if (!model_out.empty()) {
        auto out = open_out(model_out);
        out << to_json(tree).dump(2) << '\n';
      }
      return 0;
    }

    if (*synth) {
      const SyntheticScenario s = scenario_from_config(KeyValueConfig::load(synth_config));
      auto out = open_out(synth_out);
      const auto samples = to_pmu_samples(synthesize_scenario(s));
      write_csv(out, samples);
      std::cerr << "wrote " << samples.size() << " samples at " << s.sample_rate_hz << " Hz\n";
      return 0;
    }

    if (*corpus) {
      const auto events = generate_corpus(random_stable_model(4, 1, corpus_model_seed), cc);
      auto out = open_out(corpus_out);
      write_training_csv(out, corpus_rows(events));
      std::cerr << "wrote " << events.size() << " labeled events\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
