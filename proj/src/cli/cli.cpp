#include "canids/cli/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "canids/cli/run_config.hpp"
#include "canids/lora/lora.hpp"
#include "canids/model/checkpoint.hpp"
#include "canids/sim/traffic.hpp"
#include "canids/util/hash.hpp"

namespace canids::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class Failure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Failure("cannot write " + path.string());
  out << text;
}

std::vector<std::string> source_names(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

std::vector<can::LabeledRecord> read_data(const fs::path& path, const std::optional<std::string>& cls) {
  if (fs::is_directory(path)) return can::read_log_dir(path);
  if (!fs::exists(path)) throw Failure("no such file or directory: " + path.string());
  std::optional<can::AttackClass> c;
  if (cls) {
    c = can::class_from_name(*cls);
    if (!c) throw Failure("unknown class '" + *cls + "'");
  } else {
    c = can::class_from_filename(path);
  }
  if (!c) throw Failure("cannot infer the attack class of " + path.string() + "; pass --class");
  return can::read_log(path, *c);
}

// ---- generate ------------------------------------------------------------------

struct GenerateArgs {
  std::string profile = "default";
  std::string attacks = "default";
  std::uint64_t seed = 0;
  double duration = 60.0;
  std::string out;
};

void do_generate(const GenerateArgs& a, std::ostream& out) {
  const auto profile = sim::read_profile(a.profile, a.duration, a.seed);
  const auto specs = sim::read_attacks(a.attacks, profile.duration_s);
  const auto result = sim::simulate_capture(profile, specs, a.seed);
  can::write_log_dir(a.out, result.capture.records);
  write_text(fs::path(a.out) / "manifest.json", result.manifest.to_json());
  out << "wrote " << result.capture.records.size() << " frames to " << a.out << "\n";
}

// ---- split ---------------------------------------------------------------------

struct SplitArgs {
  std::string in;
  std::string out;
  std::string config;
  std::optional<double> p;
  std::optional<std::uint64_t> seed;
  std::optional<double> normal_ratio;
  std::optional<double> train_fraction;
};

void do_split(const SplitArgs& a, std::ostream& out) {
  std::vector<KvEntry> entries;
  if (!a.config.empty()) entries = read_kv_file(a.config);
  auto flag = [&](const char* key, const std::string& v) { entries.push_back({key, v, "--flag"}); };
  if (a.p) flag("subsample_p", fmt(*a.p));
  if (a.seed) flag("split_seed", std::to_string(*a.seed));
  if (a.normal_ratio) flag("normal_ratio", fmt(*a.normal_ratio));
  if (a.train_fraction) flag("train_fraction", fmt(*a.train_fraction));
  const RunConfig rc = RunConfig::from_entries(entries);

  const auto records = can::read_log_dir(a.in);
  const auto bundle = data::prepare_bundle(records, rc.split);
  const fs::path dir(a.out);
  can::write_log_dir(dir / "train", data::gather(records, bundle.train));
  can::write_log_dir(dir / "validation", data::gather(records, bundle.validation));
  can::write_log_dir(dir / "test", data::gather(records, bundle.test));
  write_text(dir / "split_manifest.json", data::bundle_manifest_json(bundle, rc.split, source_names(a.in)));
  out << "train " << bundle.train.size() << ", validation " << bundle.validation.size() << ", test "
      << bundle.test.size() << " records written to " << a.out << "\n";
}

// ---- train ---------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::optional<std::string> arch;
  bool lora = false;
  std::string out;
  std::optional<std::string> data;
  std::optional<std::string> base;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::vector<std::string> sets;
};

void do_train(const TrainArgs& a, std::ostream& out) {
  std::vector<KvEntry> entries;
  if (!a.config.empty()) entries = read_kv_file(a.config);
  auto flag = [&](const std::string& key, const std::string& v) { entries.push_back({key, v, "--flag"}); };
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Failure("--set expects key=value, got '" + s + "'");
    flag(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  if (a.arch) flag("arch", *a.arch);
  if (a.lora) flag("lora", "true");
  if (a.data) flag("data_dir", *a.data);
  if (a.base) flag("base_checkpoint", *a.base);
  if (a.seed) flag("seed", std::to_string(*a.seed));
  if (a.epochs) flag("epochs", std::to_string(*a.epochs));
  if (a.lr) flag("lr", fmt(*a.lr));
  const RunConfig rc = RunConfig::from_entries(entries);
  if (rc.data_dir.empty()) throw Failure("train needs a split directory (--data or data_dir)");
  const fs::path data_dir(rc.data_dir);
  const auto train_set = can::read_log_dir(data_dir / "train");
  const auto val_set = can::read_log_dir(data_dir / "validation");

  std::optional<model::TransformerModel> m;
  std::uint64_t base_fp = 0;
  if (rc.use_lora) {
    if (rc.base_checkpoint.empty()) throw Failure("--lora needs a base checkpoint (--base or base_checkpoint)");
    m.emplace(model::load_checkpoint(rc.base_checkpoint));
    base_fp = model::checkpoint_fingerprint(*m);
    if (rc.reinit_head) m->reinit_head(rc.lora.seed);
    lora::attach_adapters(*m, rc.lora);
  } else {
    if (!rc.base_checkpoint.empty()) {
      m.emplace(model::load_checkpoint(rc.base_checkpoint));
      if (rc.reinit_head) m->reinit_head(rc.model.seed);
    } else {
      m.emplace(rc.model);
    }
  }
  const auto counts = lora::count_trainable(*m);
  out << "arch " << text::arch_name(m->config().arch) << ", " << counts.trainable << " of " << counts.total
      << " parameters trainable\n";
  auto result = train::train_run(*m, train_set, val_set, rc.train, [&](const train::EpochStats& e) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %zu  train_loss %.6f  val_loss %.6f  BA %.6f\n", e.epoch, e.train_loss,
                  e.val_loss, e.ba);
    out << buf << std::flush;
  });

  const fs::path dir(a.out);
  fs::create_directories(dir);
  model::save_checkpoint(result.best, dir / "model.ckpt");
  if (rc.use_lora) lora::save_adapters(result.best, base_fp, dir / "adapters.lora");
  write_text(dir / "history.csv", result.history.to_csv());
  if (rc.write_svg) write_text(dir / "history.svg", result.history.to_svg());
  write_text(dir / "run_config.conf", rc.to_text());
  out << "best epoch " << result.best_epoch << "; checkpoint written to " << (dir / "model.ckpt").string() << "\n";
}

// ---- eval ----------------------------------------------------------------------

struct EvalArgs {
  std::string model;
  std::string data;
  std::string report;
  std::optional<std::string> adapters;
  std::optional<std::string> cls;
  std::size_t batch = 256;
};

void do_eval(const EvalArgs& a, std::ostream& out) {
  auto m = model::load_checkpoint(a.model);
  if (a.adapters) m = lora::load_adapters(m, *a.adapters);
  const auto records = read_data(a.data, a.cls);
  if (records.empty()) throw Failure("no records in " + a.data);
  const auto ev = train::evaluate(m, records, a.batch);
  const std::string name = fs::path(a.model).stem().string();
  const fs::path report(a.report);
  write_text(report, metrics::report_json(ev.report, name));
  const std::string table = metrics::report_table(ev.report, name);
  fs::path table_path = report;
  table_path.replace_extension(".txt");
  if (table_path != report) write_text(table_path, table);
  out << table;
}

// ---- predict -------------------------------------------------------------------

struct PredictArgs {
  std::string model;
  std::string line;
  std::optional<std::string> adapters;
};

void do_predict(const PredictArgs& a, std::ostream& out) {
  auto m = model::load_checkpoint(a.model);
  if (a.adapters) m = lora::load_adapters(m, *a.adapters);
  // The flag column is optional here; it never influences the prediction.
  can::ParsedFrame parsed;
  try {
    parsed = can::parse_frame(a.line, 1);
  } catch (const can::ParseError& e) {
    if (e.kind() != can::ParseErrorKind::FieldCount) throw;
    parsed = can::parse_frame(a.line + ",R", 1);
  }
  const auto pred = m.predict(parsed.frame);
  out << can::class_name(pred.label) << "\n";
  char buf[64];
  for (std::size_t c = 0; c < pred.probabilities.size(); ++c) {
    const std::string name(can::class_name(can::class_from_index(c)));
    std::snprintf(buf, sizeof buf, "%-10s %.9f\n", name.c_str(), pred.probabilities[c]);
    out << buf;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"CAN-bus intrusion detection toolkit", "canids"};
  app.require_subcommand(1);

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "simulate a labelled capture");
  gen->add_option("--profile", ga.profile, "background profile file or 'default'");
  gen->add_option("--attacks", ga.attacks, "attack spec file, 'default' or 'none'");
  gen->add_option("--seed", ga.seed, "random seed");
  gen->add_option("--duration", ga.duration, "capture length in seconds for the default profile");
  gen->add_option("--out", ga.out, "output directory")->required();

  SplitArgs sa;
  auto* spl = app.add_subcommand("split", "train/validation/test split with balanced subsampling");
  spl->add_option("--in", sa.in, "directory of per-class CSVs")->required();
  spl->add_option("--out", sa.out, "output directory")->required();
  spl->add_option("--config", sa.config, "run config file");
  spl->add_option("--p", sa.p, "attack-class subsample fraction of the training side");
  spl->add_option("--seed", sa.seed, "split seed");
  spl->add_option("--normal-ratio", sa.normal_ratio, "how many times smaller the normal fraction is");
  spl->add_option("--train-fraction", sa.train_fraction, "outer train fraction");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "train a classifier");
  trn->add_option("--config", ta.config, "run config file");
  trn->add_option("--arch", ta.arch, "encoder or decoder");
  trn->add_flag("--lora", ta.lora, "fine-tune low-rank adapters on a frozen base");
  trn->add_option("--out", ta.out, "output directory")->required();
  trn->add_option("--data", ta.data, "split directory");
  trn->add_option("--base", ta.base, "base checkpoint");
  trn->add_option("--seed", ta.seed, "seed for init, batching and dropout");
  trn->add_option("--epochs", ta.epochs, "epochs");
  trn->add_option("--lr", ta.lr, "learning rate");
  trn->add_option("--set", ta.sets, "extra key=value config override (repeatable)");

  EvalArgs ea;
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint");
  evl->add_option("--model", ea.model, "checkpoint")->required();
  evl->add_option("--data", ea.data, "CSV file or directory of per-class CSVs")->required();
  evl->add_option("--report", ea.report, "JSON report path")->required();
  evl->add_option("--adapters", ea.adapters, "adapter file for the checkpoint");
  evl->add_option("--class", ea.cls, "attack class of a single CSV file");
  evl->add_option("--batch", ea.batch, "inference batch size");

  PredictArgs pa;
  auto* prd = app.add_subcommand("predict", "classify one CSV line");
  prd->add_option("--model", pa.model, "checkpoint")->required();
  prd->add_option("--line", pa.line, "timestamp,id,dlc,bytes...[,flag]")->required();
  prd->add_option("--adapters", pa.adapters, "adapter file for the checkpoint");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "canids: error: " << e.what() << "\n";
    const CLI::App* sub = nullptr;
    for (const auto* s : app.get_subcommands()) sub = s;
    err << (sub ? sub->help() : app.help());
    return 1;
  }

  try {
    if (gen->parsed()) do_generate(ga, out);
    else if (spl->parsed()) do_split(sa, out);
    else if (trn->parsed()) do_train(ta, out);
    else if (evl->parsed()) do_eval(ea, out);
    else if (prd->parsed()) do_predict(pa, out);
  } catch (const std::exception& e) {
    err << "canids: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace canids::cli
