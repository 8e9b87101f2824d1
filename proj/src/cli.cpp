#include "demorph/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>

#include <json.hpp>

#include "demorph/csv.hpp"
#include "demorph/data.hpp"
#include "demorph/error.hpp"
#include "demorph/evaluation.hpp"
#include "demorph/morph.hpp"
#include "demorph/training.hpp"

namespace demorph::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kModule = "cli";

struct Flags {
  std::string config, manifest, out, checkpoint, input;
  std::uint64_t seed = 0;
  int epochs = 0, batch_size = 0, image_size = 0;
  double fmr = 0.0;
  std::vector<std::pair<CLI::Option*, std::string>> keyed;  // option -> config key
};

void add_flags(CLI::App& sub, Flags& f, bool train_flags, bool eval_flags) {
  sub.add_option("--config", f.config, "JSON config file; flags override its values");
  f.keyed.emplace_back(sub.add_option("--seed", f.seed, "seed for every random choice"), "seed");
  f.keyed.emplace_back(sub.add_option("--manifest", f.manifest, "input manifest"), "manifest");
  f.keyed.emplace_back(sub.add_option("--out", f.out, "output directory"), "out");
  f.keyed.emplace_back(sub.add_option("--checkpoint", f.checkpoint, "model checkpoint"), "checkpoint");
  f.keyed.emplace_back(sub.add_option("--input", f.input, "input image or score table"), "input");
  if (train_flags) {
    f.keyed.emplace_back(sub.add_option("--epochs", f.epochs, "training epochs"), "train.epochs");
    f.keyed.emplace_back(sub.add_option("--batch-size", f.batch_size, "training batch size"), "train.batch_size");
    f.keyed.emplace_back(sub.add_option("--image-size", f.image_size, "model resolution"), "train.image_size");
  }
  if (eval_flags) f.keyed.emplace_back(sub.add_option("--fmr", f.fmr, "false match rate for TMR"), "eval.fmr");
}

void set_key(json& j, const std::string& dotted, json value) {
  json* node = &j;
  std::size_t start = 0;
  for (std::size_t dot; (dot = dotted.find('.', start)) != std::string::npos; start = dot + 1) {
    node = &(*node)[dotted.substr(start, dot - start)];
  }
  (*node)[dotted.substr(start)] = std::move(value);
}

json flag_value(const Flags& f, const std::string& key) {
  if (key == "seed") return f.seed;
  if (key == "manifest") return f.manifest;
  if (key == "out") return f.out;
  if (key == "checkpoint") return f.checkpoint;
  if (key == "input") return f.input;
  if (key == "train.epochs") return f.epochs;
  if (key == "train.batch_size") return f.batch_size;
  if (key == "train.image_size") return f.image_size;
  return f.fmr;
}

json load_config(const Flags& f) {
  json j = json::object();
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw Error(ErrorCategory::io, kModule, "cannot read config " + f.config);
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(ErrorCategory::config, kModule, "config " + f.config + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw Error(ErrorCategory::config, kModule, "config root must be an object");
    for (const auto& item : j.items()) {
      static const std::vector<std::string> known = {"seed",  "manifest", "out",   "checkpoint", "input",
                                                     "train", "morph",    "split", "eval",       "plot"};
      if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
        throw Error(ErrorCategory::config, kModule, "unknown config key '" + item.key() + "'");
      }
    }
  }
  for (const auto& [option, key] : f.keyed) {
    if (option->count() > 0) set_key(j, key, flag_value(f, key));
  }
  return j;
}

template <class T>
T value_or(const json& j, const std::string& dotted, T fallback) {
  const json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const auto key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) return fallback;
    node = &node->at(key);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    return node->get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::config, kModule, "bad value for '" + dotted + "': " + e.what());
  }
}

fs::path required_path(const json& j, const std::string& key, const char* flag) {
  const auto v = value_or<std::string>(j, key, "");
  if (v.empty()) throw Error(ErrorCategory::config, kModule, std::string("missing required ") + flag);
  return v;
}

void check_section(const json& j, const char* section, std::initializer_list<const char*> keys) {
  if (!j.contains(section)) return;
  const auto& s = j.at(section);
  if (!s.is_object()) throw Error(ErrorCategory::config, kModule, std::string(section) + " must be an object");
  for (const auto& item : s.items()) {
    bool ok = false;
    for (const char* k : keys) ok = ok || item.key() == k;
    if (!ok) throw Error(ErrorCategory::config, kModule, "unknown config key '" + std::string(section) + "." + item.key() + "'");
  }
}

std::uint64_t resolve_seed(const json& j, std::ostream& err) {
  if (j.contains("seed")) return value_or<std::uint64_t>(j, "seed", 0);
  std::random_device rd;
  const std::uint64_t seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  err << "seed " << seed << " (unset; chosen at random)\n";
  return seed;
}

data::LoaderOptions loader_options(int image_size) {
  data::LoaderOptions options;
  options.image_size = image_size;
  options.cache_dir = data::cache_dir_from_env();
  return options;
}

int cmd_morph(const json& j, std::ostream& out) {
  check_section(j, "morph", {"warp_fraction", "blend_alpha"});
  const auto manifest = required_path(j, "manifest", "--manifest");
  const auto out_dir = required_path(j, "out", "--out");
  MorphParams defaults;
  defaults.warp_fraction = value_or(j, "morph.warp_fraction", defaults.warp_fraction);
  defaults.blend_alpha = value_or(j, "morph.blend_alpha", defaults.blend_alpha);
  const auto rows = generate_morphs(read_pair_manifest(manifest, defaults), out_dir);
  out << "wrote " << rows.size() << " morphs to " << out_dir.string() << '\n';
  return 0;
}

int cmd_split(const json& j, std::ostream& out, std::ostream& err) {
  check_section(j, "split", {"train_fraction", "non_morphed_in_train"});
  const auto manifest = required_path(j, "manifest", "--manifest");
  const auto out_dir = required_path(j, "out", "--out");
  data::SplitSpec spec;
  spec.seed = resolve_seed(j, err);
  spec.train_fraction = value_or(j, "split.train_fraction", spec.train_fraction);
  spec.non_morphed_in_train = value_or(j, "split.non_morphed_in_train", spec.non_morphed_in_train);
  const auto split = data::subject_disjoint_split(data::load_manifest(manifest), spec);
  data::write_split(split, out_dir);
  out << data::split_summary(split);
  return 0;
}

int cmd_train(const json& j, std::ostream& out, std::ostream& err) {
  const auto manifest = required_path(j, "manifest", "--manifest");
  const auto out_dir = required_path(j, "out", "--out");
  auto config = training::train_config_from_json(j.value("train", json::object()));
  config.seed = resolve_seed(j, err);
  config.train_manifest = fs::absolute(manifest);
  config.out_dir = out_dir;

  const auto records = data::load_manifest(manifest);
  for (const auto& r : records) {
    if (r.label != data::Label::morphed) {
      throw Error(ErrorCategory::data, kModule,
                  "train manifest contains non-morphed row " + r.input_path.string() + "; training uses morphs only");
    }
  }
  auto source = std::make_shared<training::ManifestSource>(records, loader_options(config.image_size));

  const auto checkpoint = value_or<std::string>(j, "checkpoint", "");
  std::optional<training::Trainer> trainer;
  if (checkpoint.empty()) {
    trainer.emplace(config, source);
  } else {
    std::optional<int> epochs;
    if (j.contains("train") && j.at("train").contains("epochs")) epochs = config.epochs;
    trainer.emplace(training::Trainer::resume(checkpoint, source, epochs, out_dir));
  }
  while (trainer->epoch() < trainer->config().epochs) {
    const auto s = trainer->run_epoch();
    out << "epoch " << s.epoch << " steps " << s.steps << " L_R " << s.l_r << " L_C " << s.l_c << " L_B " << s.l_b
        << " L_M " << s.l_m << " total " << s.total << '\n';
    const int done = trainer->epoch();
    if (done % trainer->config().checkpoint_every == 0 || done == trainer->config().epochs) {
      const auto path = trainer->checkpoint_path_for(done);
      trainer->save_checkpoint(path);
      out << "checkpoint " << path.string() << '\n';
    }
  }
  return 0;
}

int cmd_demorph(const json& j, std::ostream& out) {
  const auto checkpoint = required_path(j, "checkpoint", "--checkpoint");
  const auto input = required_path(j, "input", "--input");
  const auto out_dir = required_path(j, "out", "--out");
  auto model = training::load_model(checkpoint);
  const int side = model.config.image_size;
  const auto x = data::preprocess(read_image(input), side, side, std::nullopt, data::center_square_crop);
  const auto r = training::demorph(model, x);
  const auto stem = input.stem().string();
  fs::create_directories(out_dir);
  write_image(r.o1, out_dir / (stem + "_out1.png"));
  write_image(r.o2, out_dir / (stem + "_out2.png"));
  std::ofstream dist(out_dir / (stem + "_distances.txt"));
  dist << "d_o1_x " << csv::format_double(r.d_o1_x) << '\n'
       << "d_o2_x " << csv::format_double(r.d_o2_x) << '\n'
       << "d_o1_o2 " << csv::format_double(r.d_o1_o2) << '\n';
  if (!dist) throw Error(ErrorCategory::io, kModule, "cannot write distances to " + out_dir.string());
  out << "wrote " << (out_dir / (stem + "_out1.png")).string() << " and " << (out_dir / (stem + "_out2.png")).string()
      << '\n';
  return 0;
}

int cmd_eval(const json& j, std::ostream& out) {
  check_section(j, "eval", {"fmr"});
  const auto out_dir = required_path(j, "out", "--out");
  const double fmr = value_or(j, "eval.fmr", 0.1);
  eval::ScoreTable table;
  const auto input = value_or<std::string>(j, "input", "");
  if (!input.empty()) {
    table = eval::read_score_table(input);
  } else {
    const auto checkpoint = required_path(j, "checkpoint", "--checkpoint or --input");
    const auto manifest = required_path(j, "manifest", "--manifest");
    auto model = training::load_model(checkpoint);
    const auto samples =
        eval::demorph_manifest(model, data::load_manifest(manifest), loader_options(model.config.image_size));
    table = eval::score_demorph_outputs(samples, model.nets.comparator);
    eval::write_score_table(table, out_dir / "scores.csv");
  }
  const auto report = eval::compute_metrics(table, fmr).to_text();
  fs::create_directories(out_dir);
  std::ofstream(out_dir / "metrics.txt") << report;
  out << report;
  return 0;
}

int cmd_plot(const json& j, std::ostream& out) {
  check_section(j, "plot", {"ext"});
  const auto input = required_path(j, "input", "--input");
  const auto out_dir = required_path(j, "out", "--out");
  const auto files = eval::emit_histograms(eval::read_score_table(input), out_dir, value_or<std::string>(j, "plot.ext", "png"));
  for (const auto& f : files) out << "wrote " << f.string() << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reference-free face de-morphing lab"};
  app.name(args.empty() ? "demorph_lab" : args.front());
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Flags flags;
  auto* morph = app.add_subcommand("morph", "build landmark morphs from a pair manifest");
  auto* split = app.add_subcommand("split", "subject-disjoint train/test split of a sample manifest");
  auto* train = app.add_subcommand("train", "train (or resume) the de-morphing networks");
  auto* demorph = app.add_subcommand("demorph", "decompose one image with a trained checkpoint");
  auto* evaluate = app.add_subcommand("eval", "score outputs and report d-prime and TMR@FMR");
  auto* plot = app.add_subcommand("plot", "render distance histograms from a score table");
  add_flags(*morph, flags, false, false);
  add_flags(*split, flags, false, false);
  add_flags(*train, flags, true, false);
  add_flags(*demorph, flags, false, false);
  add_flags(*evaluate, flags, false, true);
  add_flags(*plot, flags, false, false);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error[cli/config]: " << e.what() << '\n';
    return 2;
  }

  try {
    const json j = load_config(flags);
    if (morph->parsed()) return cmd_morph(j, out);
    if (split->parsed()) return cmd_split(j, out, err);
    if (train->parsed()) return cmd_train(j, out, err);
    if (demorph->parsed()) return cmd_demorph(j, out);
    if (evaluate->parsed()) return cmd_eval(j, out);
    return cmd_plot(j, out);
  } catch (const Error& e) {
    err << "error[" << e.module() << '/' << to_string(e.category()) << "]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::string what = e.what();
    err << "error[" << kModule << "/internal]: " << what.substr(0, what.find('\n')) << '\n';
    return 1;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args);
}

}  // namespace demorph::cli
