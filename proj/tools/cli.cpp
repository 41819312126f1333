#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "gradpath/data.hpp"
#include "gradpath/gradcheck.hpp"
#include "gradpath/gradinput.hpp"
#include "gradpath/models.hpp"
#include "gradpath/pgm.hpp"
#include "gradpath/train.hpp"

namespace gradpath::cli {
namespace {

struct Options {
  std::string dataset = "mnist";
  std::string arch = "baseline";
  std::size_t epochs = 5;
  std::size_t batch_size = 64;
  double lr = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  std::size_t subset = 0;
  int precision = 32;
  std::string data_dir;
  std::string out;
  std::string save;
  bool no_timing = false;
  std::string in;
};

std::string default_data_dir_string() {
  if (auto d = default_data_dir()) return d->string();
  return "data";
}

void add_dataset(CLI::App* cmd, Options& o) {
  cmd->add_option("--dataset", o.dataset, "mnist, cifar10, cifar100 or toy")
      ->capture_default_str()
      ->check(CLI::IsMember({"mnist", "cifar10", "cifar100", "toy"}));
}

void add_arch(CLI::App* cmd, Options& o) {
  cmd->add_option("--arch", o.arch, "baseline or dualpath")
      ->capture_default_str()
      ->check(CLI::IsMember({"baseline", "dualpath", "single", "dual"}));
}

void add_training(CLI::App* cmd, Options& o) {
  add_dataset(cmd, o);
  cmd->add_option("--epochs", o.epochs, "training epochs")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--batch-size", o.batch_size, "minibatch size")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--lr", o.lr, "SGD learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--momentum", o.momentum, "SGD momentum")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 0.999999));
  cmd->add_option("--seed", o.seed, "init and shuffle seed")->capture_default_str();
  cmd->add_option("--subset", o.subset, "train on the first N samples (0 = full split)")
      ->capture_default_str();
  cmd->add_option("--precision", o.precision, "32 or 64 bit floats")
      ->capture_default_str()
      ->check(CLI::IsMember({32, 64}));
  cmd->add_option("--data-dir", o.data_dir, "dataset root (default: $GRADPATH_DATA_DIR, else ./data)");
  cmd->add_option("--out", o.out, "metrics CSV path (default: stdout)");
  cmd->add_flag("--no-timing", o.no_timing, "write wall_time_s as 0 for byte-reproducible CSV");
}

TrainConfig to_config(const Options& o) {
  TrainConfig c;
  c.dataset = parse_dataset_kind(o.dataset);
  c.topology = parse_topology(o.arch);
  c.epochs = o.epochs;
  c.batch_size = o.batch_size;
  c.learning_rate = o.lr;
  c.momentum = o.momentum;
  c.seed = o.seed;
  if (o.subset > 0) c.subset_size = o.subset;
  c.precision = o.precision;
  c.validate();
  return c;
}

std::pair<Dataset, Dataset> load_splits(const Options& o, DatasetKind kind) {
  const std::filesystem::path root = o.data_dir.empty() ? default_data_dir_string() : o.data_dir;
  return {load_dataset(kind, Split::train, root), load_dataset(kind, Split::test, root)};
}

void print_row(std::ostream& out, const MetricsRow& r) {
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "epoch %zu %-8s train_loss %.4f train_acc %.4f test_loss %.4f test_acc %.4f (%.1fs)",
                r.epoch, r.arch.c_str(), r.train_loss, r.train_acc, r.test_loss, r.test_acc,
                r.wall_time_s);
  out << buf << std::endl;
}

void emit_csv(const Options& o, std::span<const MetricsRow> rows, std::ostream& out) {
  if (o.out.empty()) {
    write_metrics_csv(out, rows, !o.no_timing);
    return;
  }
  std::ofstream f(o.out, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + o.out);
  write_metrics_csv(f, rows, !o.no_timing);
  if (!f) throw DataError("failed writing " + o.out);
}

int run_train(const Options& o, std::ostream& out) {
  const TrainConfig cfg = to_config(o);
  if (!o.save.empty() && cfg.precision == 64) throw ParameterError("--save needs --precision 32");
  auto [train, test] = load_splits(o, cfg.dataset);
  std::vector<MetricsRow> rows;
  auto log = [&](const MetricsRow& r) { print_row(out, r); };
  if (cfg.precision == 64) {
    auto model = build_model<double>(architecture_for(cfg.dataset), cfg.topology, cfg.seed);
    rows = train_arm(model, train, test, cfg, log);
  } else {
    auto model = build_model<float>(architecture_for(cfg.dataset), cfg.topology, cfg.seed);
    rows = train_arm(model, train, test, cfg, log);
    if (!o.save.empty()) save_checkpoint(model, o.save);
  }
  emit_csv(o, rows, out);
  return kOk;
}

int run_compare(const Options& o, std::ostream& out) {
  const TrainConfig cfg = to_config(o);
  auto [train, test] = load_splits(o, cfg.dataset);
  const ExperimentResult r =
      run_experiment(cfg, train, test, [&](const MetricsRow& row) { print_row(out, row); });
  out << std::fixed << std::setprecision(4) << "final test_acc baseline " << r.baseline_test_acc
      << " dualpath " << r.dualpath_test_acc << " delta " << std::showpos << r.delta()
      << std::noshowpos << std::defaultfloat << "\n";
  emit_csv(o, r.rows, out);
  return kOk;
}

int run_gradcheck(const Options& o, std::ostream& out) {
  GradcheckOptions opts;
  opts.seed = o.seed;
  const GradcheckReport report = gradcheck_suite(opts);
  for (const auto& e : report.entries) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-4s %-22s %-36s %.3e", e.passed ? "ok" : "FAIL",
                  e.subject.c_str(), e.tensor.c_str(), e.max_rel_error);
    out << buf << "\n";
  }
  out << (report.passed() ? "gradcheck passed" : "gradcheck FAILED") << " (" << report.entries.size()
      << " tensors, tolerance " << report.tolerance << ")\n";
  return report.passed() ? kOk : kFailure;
}

int run_transform(const Options& o, std::ostream& out) {
  const Tensor image = read_pgm(o.in);
  const Tensor g = gradient_transform(image);
  const PgmRange range = write_pgm_rescaled(g, o.out);
  std::ostringstream line;
  line << std::setprecision(9) << "min " << range.min << " max " << range.max << "\n";
  const std::string sidecar = o.out + ".range";
  std::ofstream f(sidecar, std::ios::trunc);
  f << line.str();
  if (!f) throw DataError("cannot write " + sidecar);
  out << "wrote " << o.out << " (" << g.dim(3) << "x" << g.dim(2) << "), " << line.str();
  return kOk;
}

int run_info(const Options& o, std::ostream& out) {
  const auto model =
      build_model<float>(architecture_for(parse_dataset_kind(o.dataset)), parse_topology(o.arch), o.seed);
  const auto rows = layer_table(model);
  out << std::left << std::setw(24) << "layer" << std::setw(22) << "type" << std::setw(18)
      << "output" << std::right << std::setw(10) << "params"
      << "  config\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(24) << r.name << std::setw(22) << r.kind << std::setw(18)
        << r.output_shape << std::right << std::setw(10) << r.params << "  " << r.config << "\n";
  }
  out << "dataset " << o.dataset << ", arch " << arch_tag(model.topology())
      << ", trainable params " << param_count(model) << "\n";
  return kOk;
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual-path (image + gradient image) CNN trainer and tools", "gradpath"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  Options o;

  CLI::App* train = app.add_subcommand("train", "train one architecture and write per-epoch metrics");
  add_training(train, o);
  add_arch(train, o);
  train->add_option("--save", o.save, "write a checkpoint after training (32-bit only)");

  CLI::App* compare =
      app.add_subcommand("compare", "train baseline and dualpath from identical initial weights");
  add_training(compare, o);

  CLI::App* check = app.add_subcommand("gradcheck", "finite-difference check of every layer and both topologies");
  check->add_option("--seed", o.seed, "random inputs seed")->capture_default_str();

  CLI::App* transform = app.add_subcommand("transform", "write the dx+dy gradient image of a P5 PGM");
  transform->add_option("--in", o.in, "input P5 PGM")->required();
  transform->add_option("--out", o.out, "output P5 PGM; bounds go to <out>.range")->required();

  CLI::App* info = app.add_subcommand("info", "print the layer table and parameter count");
  add_dataset(info, o);
  add_arch(info, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  DatasetKind kind = DatasetKind::toy;
  try {
    kind = parse_dataset_kind(o.dataset);
    if (*train) return run_train(o, out);
    if (*compare) return run_compare(o, out);
    if (*check) return run_gradcheck(o, out);
    if (*transform) return run_transform(o, out);
    if (*info) return run_info(o, out);
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kData;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    if (*train || *compare) err << fetch_instructions(kind) << "\n";
    return kData;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << "\n";
    return kFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace gradpath::cli
