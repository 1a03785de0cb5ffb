// thrifty: train, evaluate and size recursive single-filter-bank CNNs.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 usage or configuration error,
// 3 data or checkpoint error, 4 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "thrifty/checkpoint.hpp"
#include "thrifty/data.hpp"
#include "thrifty/errors.hpp"
#include "thrifty/gradcheck.hpp"
#include "thrifty/metrics.hpp"
#include "thrifty/model_spec.hpp"
#include "thrifty/planner.hpp"
#include "thrifty/sweep.hpp"
#include "thrifty/train.hpp"

namespace fs = std::filesystem;
using namespace thrifty;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  if (text.empty() || text == "none") return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(key, item));
  return out;
}

struct ModelFlags {
  ModelSpec spec;
  std::string schedule = "regular";
  std::string conv_mode = "classical";
  std::string activation = "relu";
  std::string pool_order = "pool_then_normalize";
  std::string convention = "total";
  std::string alpha_init = "identity";
  std::size_t input_size = 32;

  void add(CLI::App* app, bool with_input_size) {
    app->add_option("--filters", spec.filters, "Filter count f; 0 solves f from --budget")->capture_default_str();
    app->add_option("--budget", spec.budget, "Parameter budget used when --filters is 0")->capture_default_str();
    app->add_option("--budget-convention", convention, "total | tabulated")->capture_default_str();
    app->add_option("--iterations", spec.iterations, "Recursion depth T")->capture_default_str();
    app->add_option("--history", spec.history, "Residual history h (0 = plain recursion)")->capture_default_str();
    app->add_option("--kernel", spec.kernel, "Square kernel size (odd)")->capture_default_str();
    app->add_option("--conv-mode", conv_mode, "classical | grouped")->capture_default_str();
    app->add_option("--activation", activation, "relu | tanh")->capture_default_str();
    app->add_option("--pool-order", pool_order, "pool_then_normalize | normalize_then_pool (plain only)")
        ->capture_default_str();
    app->add_option("--pools", spec.pools, "Number of 2x2 downsamplings")->capture_default_str();
    app->add_option("--schedule", schedule, "regular | front_loaded | explicit list such as 1,2,1,2")
        ->capture_default_str();
    app->add_option("--alpha-init", alpha_init, "identity | uniform")->capture_default_str();
    app->add_option("--classes", spec.num_classes, "Number of classes (taken from the dataset when training)")
        ->capture_default_str();
    if (with_input_size) {
      app->add_option("--input-size", input_size, "Square input side for Mac counting")->capture_default_str();
    }
  }

  ModelSpec finalize() const {
    ModelSpec s = spec;
    s.conv_mode = parse_conv_mode(conv_mode);
    s.activation = parse_activation(activation);
    s.pool_order = parse_pool_order(pool_order);
    s.convention = parse_budget_convention(convention);
    if (schedule.find(',') != std::string::npos || schedule == "1" || schedule == "2") {
      s.placement = Placement::explicit_list;
      s.schedule = schedule;
    } else {
      s.placement = parse_placement(schedule);
    }
    return s;
  }

  AlphaInit init() const {
    if (alpha_init == "identity") return AlphaInit::identity;
    if (alpha_init == "uniform") return AlphaInit::uniform;
    throw ConfigError("unknown alpha init '" + alpha_init + "' (identity|uniform)");
  }
};

struct DataFlags {
  std::string dataset = "cifar10";
  std::string data_dir;
  std::string train_file;
  std::string test_file;
  std::size_t train_subset = 0;
  std::size_t test_subset = 0;
  bool test_only = false;  // eval-style commands: raw data needs only --test-file

  void add(CLI::App* app) {
    app->add_option("--dataset", dataset, "cifar10 | cifar100 | raw")->capture_default_str();
    app->add_option("--data-dir", data_dir, "Directory with the CIFAR binary files")->capture_default_str();
    app->add_option("--train-file", train_file, "RAWT1 training tensor (--dataset raw)")->capture_default_str();
    app->add_option("--test-file", test_file, "RAWT1 test tensor (--dataset raw)")->capture_default_str();
    app->add_option("--train-subset", train_subset, "Use the first N training samples (0 = all)")
        ->capture_default_str();
    app->add_option("--test-subset", test_subset, "Use the first N test samples (0 = all)")->capture_default_str();
  }

  // Path problems are configuration errors and are detected before any output is written.
  void check() const {
    if (dataset == "cifar10" || dataset == "cifar100") {
      if (data_dir.empty()) throw ConfigError("--data-dir is required for " + dataset);
      if (!fs::is_directory(data_dir)) throw ConfigError("data directory not found: " + data_dir);
    } else if (dataset == "raw") {
      const std::vector<std::string> needed =
          test_only ? std::vector<std::string>{test_file} : std::vector<std::string>{train_file, test_file};
      for (const auto& f : needed) {
        if (f.empty()) {
          throw ConfigError(test_only ? "--test-file is required for --dataset raw"
                                      : "--train-file and --test-file are required for --dataset raw");
        }
        if (!fs::is_regular_file(f)) throw ConfigError("data file not found: " + f);
      }
    } else {
      throw ConfigError("unknown dataset '" + dataset + "' (cifar10|cifar100|raw)");
    }
  }

  // `classes` fixes the class count of a raw test-only load.
  DatasetPair load(std::size_t classes = 0) const {
    check();
    DatasetPair d;
    if (dataset == "cifar10") {
      d = load_cifar10(data_dir);
    } else if (dataset == "cifar100") {
      d = load_cifar100(data_dir);
    } else if (test_only) {
      d.test = load_raw_tensor(test_file, Split::test, classes);
    } else {
      d.train = load_raw_tensor(train_file, Split::train);
      d.test = load_raw_tensor(test_file, Split::test, d.train.class_count);
    }
    auto head = [](ImageDataset& ds, std::size_t n) {
      if (n == 0 || n >= ds.size()) return;
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      ds = ds.subset(idx);
    };
    head(d.train, train_subset);
    head(d.test, test_subset);
    return d;
  }
};

struct TrainFlags {
  TrainConfig config;
  std::string drops = "50,100,150";
  bool alpha_reg = false;
  AlphaRegConfig reg;
  bool no_augment = false;

  void add(CLI::App* app) {
    app->add_option("--epochs", config.epochs, "Training epochs")->capture_default_str();
    app->add_option("--lr", config.lr0, "Initial learning rate")->capture_default_str();
    app->add_option("--lr-drops", drops, "Epochs where the learning rate is divided by 10 (comma list or none)")
        ->capture_default_str();
    app->add_option("--momentum", config.momentum, "SGD momentum")->capture_default_str();
    app->add_option("--weight-decay", config.weight_decay, "L2 weight decay")->capture_default_str();
    app->add_option("--batch-size", config.batch_size, "Mini-batch size")->capture_default_str();
    app->add_option("--seed", config.seed, "Seed for initialization, shuffling and augmentation")
        ->capture_default_str();
    app->add_flag("--alpha-reg", alpha_reg, "Add the double-well penalty on alpha");
    app->add_option("--lambda0", reg.lambda0, "Initial penalty weight")->capture_default_str();
    app->add_option("--lambda-eps", reg.eps, "Penalty weight growth per step")->capture_default_str();
    app->add_option("--alpha-reg-epochs", reg.epochs, "Epochs with the penalty active (0 = all)")
        ->capture_default_str();
    app->add_flag("--no-augment", no_augment, "Disable crop and flip augmentation");
  }

  TrainConfig finalize() const {
    TrainConfig c = config;
    c.lr_drops = parse_size_list("--lr-drops", drops);
    c.augment = !no_augment;
    if (alpha_reg) c.alpha_reg = reg;
    c.validate();
    return c;
  }
};

void add_config_file(CLI::App* app) {
  app->set_config("--config", "", "INI file with flag values; command-line flags override it");
}

// Resolved flag values plus the derived model, written next to the outputs.
void echo_run_spec(const CLI::App* app, const fs::path& out_dir, const ThriftyConfig* model) {
  std::string text = app->config_to_str(true, false);
  if (model) {
    const ParamCount pc = param_count(*model);
    text += "; resolved model: " + describe(*model) + "\n";
    text += "; params_total=" + std::to_string(pc.total) + " params_core=" + std::to_string(pc.core) + "\n";
  }
  write_text_file(out_dir / "run_spec.ini", text);
}

void print_counts(const ThriftyConfig& c, std::size_t side) {
  const ParamCount pc = param_count(c);
  const MacCount mc = mac_count(c, side, side);
  std::printf("filters=%zu iterations=%zu history=%zu conv=%s schedule=%s\n", c.filters, c.iterations,
              c.history, std::string(to_string(c.conv_mode)).c_str(), c.schedule.str().c_str());
  std::printf("params_core=%llu\nparams_alpha=%llu\nparams_alpha_table=%llu\nparams_head=%llu\n"
              "params_total=%llu\nparams_tabulated=%llu\n",
              (unsigned long long)pc.core, (unsigned long long)pc.alpha_full, (unsigned long long)pc.alpha_table,
              (unsigned long long)pc.head, (unsigned long long)pc.total, (unsigned long long)pc.tabulated_total);
  std::printf("macs_head=%llu\nmacs_total=%llu\n", (unsigned long long)mc.head, (unsigned long long)mc.total);
}

CsvTable plan_table(const std::vector<PlanRow>& rows) {
  CsvTable t;
  t.columns = {"f", "T", "h", "n_pools", "params_core", "params_total", "macs_total"};
  auto n = [](auto v) { return format_number(static_cast<long long>(v)); };
  for (const auto& r : rows) {
    t.rows.push_back({n(r.filters), n(r.iterations), n(r.history), n(r.n_pools), n(r.params_core),
                      n(r.params_total), n(r.macs_total)});
  }
  return t;
}

void print_row(const MetricRow& r) {
  std::printf("epoch %zu lr %g loss %.4f train_acc %.2f test_acc %.2f (%.1fs)\n", r.epoch, r.lr, r.train_loss,
              r.train_acc, r.test_acc, r.wall_time_s);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recursive single-filter-bank CNNs: training, evaluation and budget planning"};
  app.require_subcommand(1);

  // train
  ModelFlags train_model;
  DataFlags train_data;
  TrainFlags train_flags;
  std::string train_out = "run";
  bool resume = false;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write metrics.csv and checkpoints");
  train_model.add(train_cmd, false);
  train_data.add(train_cmd);
  train_flags.add(train_cmd);
  train_cmd->add_option("--out", train_out, "Output directory")->capture_default_str();
  train_cmd->add_flag("--resume", resume, "Continue from <out>/last.ckpt");
  add_config_file(train_cmd);

  // eval
  std::string eval_ckpt;
  DataFlags eval_data;
  eval_data.test_only = true;
  auto* eval_cmd = app.add_subcommand("eval", "Eval-mode test accuracy of a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval_data.add(eval_cmd);
  add_config_file(eval_cmd);

  // plan
  ModelFlags plan_model;
  std::string plan_iters = "10,15,20,30,45";
  std::string plan_pools = "1,2,3,4";
  std::string plan_out;
  auto* plan_cmd = app.add_subcommand("plan", "Solve f for a budget over (T, pools) options, sorted by Macs");
  plan_model.add(plan_cmd, true);
  plan_cmd->add_option("--iteration-options", plan_iters, "Comma list of T values")->capture_default_str();
  plan_cmd->add_option("--pool-options", plan_pools, "Comma list of pool counts")->capture_default_str();
  plan_cmd->add_option("--out", plan_out, "Also write the table to this CSV file")->capture_default_str();
  add_config_file(plan_cmd);

  // count
  ModelFlags count_model;
  auto* count_cmd = app.add_subcommand("count", "Parameter and Mac counts for one configuration");
  count_model.add(count_cmd, true);
  add_config_file(count_cmd);

  // gradcheck
  ModelFlags gc_model;
  gc_model.spec.filters = 4;
  gc_model.spec.iterations = 3;
  gc_model.spec.history = 2;
  gc_model.spec.num_classes = 3;
  gc_model.spec.pools = 2;
  GradCheckOptions gc_options;
  std::string gc_fault;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  gc_model.input_size = 8;
  gc_model.add(gc_cmd, true);
  gc_cmd->add_option("--batch", gc_options.batch, "Random batch size")->capture_default_str();
  gc_cmd->add_option("--seed", gc_options.seed, "Seed for parameters and inputs")->capture_default_str();
  gc_cmd->add_option("--step", gc_options.step, "Central difference step")->capture_default_str();
  gc_cmd->add_option("--tolerance", gc_options.tolerance, "Max relative error per group")->capture_default_str();
  gc_cmd->add_option("--inject-fault", gc_fault, "Corrupt one analytic gradient of this group (self-test)")
      ->capture_default_str();
  add_config_file(gc_cmd);

  // ablate
  ModelFlags ab_model;
  ab_model.spec.history = 5;
  DataFlags ab_data;
  TrainFlags ab_train;
  AblationConfig ab_config;
  std::string ab_out = "ablation";
  auto* ab_cmd = app.add_subcommand("ablate", "Alpha binarization and freezing experiment");
  ab_model.add(ab_cmd, false);
  ab_data.add(ab_cmd);
  ab_train.add(ab_cmd);
  // Phase length, LR drops and the penalty switch are fixed by the protocol.
  for (const char* name : {"--epochs", "--lr-drops", "--alpha-reg"}) ab_cmd->remove_option(ab_cmd->get_option(name));
  ab_cmd->add_option("--phase-epochs", ab_config.epochs_per_phase, "Epochs per phase")->capture_default_str();
  ab_cmd->add_option("--out", ab_out, "Output directory")->capture_default_str();
  add_config_file(ab_cmd);

  // export-activations
  std::string ex_ckpt;
  DataFlags ex_data;
  ex_data.test_only = true;
  std::string ex_out = "activations.csv";
  std::string ex_which = "post";
  auto* ex_cmd = app.add_subcommand("export-activations", "Per-iteration mean activation of every filter (T x f)");
  ex_cmd->add_option("--checkpoint", ex_ckpt, "Checkpoint file")->required();
  ex_data.add(ex_cmd);
  ex_cmd->add_option("--which", ex_which, "post (x_t+1) | pre (activation output)")->capture_default_str();
  ex_cmd->add_option("--out", ex_out, "Output CSV")->capture_default_str();
  add_config_file(ex_cmd);

  // sweep
  std::string sw_manifest;
  ModelFlags sw_model;
  DataFlags sw_data;
  TrainFlags sw_train;
  std::size_t sw_repeats = 1;
  std::string sw_out = "sweep";
  auto* sw_cmd = app.add_subcommand("sweep", "Train every configuration of a manifest and tabulate the trade-off");
  sw_cmd->add_option("--manifest", sw_manifest, "INI manifest, one [section] per configuration")->required();
  sw_model.add(sw_cmd, false);
  sw_data.add(sw_cmd);
  sw_train.add(sw_cmd);
  sw_cmd->add_option("--repeats", sw_repeats, "Seeds per configuration")->capture_default_str();
  sw_cmd->add_option("--out", sw_out, "Output directory")->capture_default_str();
  add_config_file(sw_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*train_cmd) {
      const TrainConfig tc = train_flags.finalize();
      ModelSpec spec = train_model.finalize();
      train_data.check();
      const fs::path out(train_out);
      DatasetPair data = train_data.load();
      spec.num_classes = data.train.class_count;
      spec.input_channels = data.train.images.shape().c;
      const ThriftyConfig mc = resolve(spec, data.train.images.shape().h, data.train.images.shape().w);
      ThriftyModel<float> model(mc, tc.seed, train_model.init());
      OptimizerState<float> state = fresh_optimizer_state(model, tc);
      MetricLog previous;
      if (resume) {
        Checkpoint<float> ck = load_checkpoint<float>(out / "last.ckpt");
        if (!ck.optimizer) throw FormatError("checkpoint has no optimizer state to resume from");
        if (!(ck.model.config == mc)) throw ConfigError("checkpoint model does not match the requested model");
        model = std::move(ck.model);
        state = std::move(*ck.optimizer);
        if (fs::exists(out / "metrics.csv")) previous = read_metric_log(out / "metrics.csv");
      }
      fs::create_directories(out);
      echo_run_spec(train_cmd, out, &mc);
      std::printf("%s\nparams_total=%llu\n", describe(mc).c_str(),
                  (unsigned long long)param_count(mc).total);
      TrainOptions opt;
      opt.checkpoint_dir = out;
      MetricLog log = previous;
      opt.on_epoch = [&](const MetricRow& r) {
        print_row(r);
        log.append(r);
        write_csv(out / "metrics.csv", log);
      };
      if (!fs::exists(out / "metrics.csv")) write_csv(out / "metrics.csv", log);
      TrainResult r = train(model, state, data.train, data.test, tc, opt);
      std::printf("final_test_acc=%s\nbest_test_acc=%s\nbest_epoch=%zu\n", format_number(r.final_test_acc).c_str(),
                  format_number(r.best_test_acc).c_str(), r.best_epoch);
      return kExitOk;
    }

    if (*eval_cmd) {
      eval_data.check();
      Checkpoint<float> ck = load_checkpoint<float>(eval_ckpt);
      DatasetPair data = eval_data.load(ck.model.config.num_classes);
      const double acc = evaluate(ck.model, data.test);
      std::printf("test_acc=%s\n", format_number(acc).c_str());
      return kExitOk;
    }

    if (*plan_cmd) {
      const ModelSpec spec = plan_model.finalize();
      PlanRequest req;
      req.problem.budget = spec.budget;
      req.problem.history = spec.history;
      req.problem.kernel_h = req.problem.kernel_w = spec.kernel;
      req.problem.conv_mode = spec.conv_mode;
      req.problem.num_classes = spec.num_classes;
      req.problem.convention = spec.convention;
      req.iteration_options = parse_size_list("--iteration-options", plan_iters);
      req.pool_options = parse_size_list("--pool-options", plan_pools);
      req.placement = spec.placement;
      if (req.placement == Placement::explicit_list) throw ConfigError("plan needs --schedule regular or front_loaded");
      req.input_h = req.input_w = plan_model.input_size;
      req.input_channels = spec.input_channels;
      const CsvTable t = plan_table(plan(req));
      std::cout << to_csv(t);
      if (!plan_out.empty()) write_csv(plan_out, t);
      return kExitOk;
    }

    if (*count_cmd) {
      print_counts(resolve(count_model.finalize(), count_model.input_size, count_model.input_size),
                   count_model.input_size);
      return kExitOk;
    }

    if (*gc_cmd) {
      const ThriftyConfig mc = resolve(gc_model.finalize(), gc_model.input_size, gc_model.input_size);
      gc_options.height = gc_options.width = gc_model.input_size;
      gc_options.inject_fault_group = gc_fault;
      const auto params = init_params<double>(mc, gc_options.seed, gc_model.init());
      const GradCheckReport report = gradcheck(mc, params, gc_options);
      std::cout << describe(mc) << "\n" << report.str() << (report.pass() ? "PASS\n" : "FAIL\n");
      return report.pass() ? kExitOk : kExitNumerical;
    }

    if (*ab_cmd) {
      TrainConfig tc = ab_train.finalize();
      ModelSpec spec = ab_model.finalize();
      ab_data.check();
      DatasetPair data = ab_data.load();
      spec.num_classes = data.train.class_count;
      spec.input_channels = data.train.images.shape().c;
      const ThriftyConfig mc = resolve(spec, data.train.images.shape().h, data.train.images.shape().w);
      ab_config.alpha_reg = ab_train.reg;
      ab_config.init_seed = tc.seed;
      ab_config.alpha_init = ab_model.init();
      const fs::path out(ab_out);
      fs::create_directories(out);
      echo_run_spec(ab_cmd, out, &mc);
      TrainOptions opt;
      opt.on_epoch = print_row;
      const AblationReport rep = ablation_alpha(mc, data.train, data.test, tc, ab_config, opt);
      CsvTable t;
      t.columns = {"variant", "final_test_acc", "best_test_acc", "alpha_unchanged"};
      for (const AblationRun* run : {&rep.baseline, &rep.continued, &rep.same_init, &rep.fresh_init}) {
        t.rows.push_back({run->name, format_number(run->final_test_acc), format_number(run->best_test_acc),
                          run->alpha_unchanged ? "1" : "0"});
        write_csv(out / (run->name + "_metrics.csv"), run->log);
      }
      write_csv(out / "ablation.csv", t);
      std::cout << to_csv(t);
      std::printf("alpha_well_distance initial=%s phase1=%s\n", format_number(rep.well_distance_initial).c_str(),
                  format_number(rep.well_distance_phase1).c_str());
      return kExitOk;
    }

    if (*ex_cmd) {
      if (ex_which != "post" && ex_which != "pre") throw ConfigError("--which must be post or pre");
      ex_data.check();
      Checkpoint<float> ck = load_checkpoint<float>(ex_ckpt);
      DatasetPair data = ex_data.load(ck.model.config.num_classes);
      const MeanActivations m = export_mean_activations(ck.model, data.test);
      write_csv(ex_out, activation_matrix_table(ex_which == "post" ? m.post : m.pre, m.iterations, m.filters));
      std::printf("wrote %zu x %zu matrix to %s\n", m.iterations, m.filters, ex_out.c_str());
      return kExitOk;
    }

    if (*sw_cmd) {
      const TrainConfig tc = sw_train.finalize();
      const ModelSpec defaults = sw_model.finalize();
      sw_data.check();
      std::vector<SweepPoint> points = load_sweep_manifest(sw_manifest, defaults);
      DatasetPair data = sw_data.load();
      for (auto& p : points) {
        p.spec.num_classes = data.train.class_count;
        p.spec.input_channels = data.train.images.shape().c;
      }
      const fs::path out(sw_out);
      fs::create_directories(out);
      echo_run_spec(sw_cmd, out, nullptr);
      const std::vector<SweepRow> rows = sweep(points, data.train, data.test, tc, sw_repeats);
      const CsvTable t = sweep_table(rows);
      write_csv(out / "sweep.csv", t);
      std::cout << to_csv(t);
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kExitConfig;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInternal;
  }
  return kExitInternal;
}
