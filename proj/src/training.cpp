#include "demorph/training.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "demorph/csv.hpp"
#include "demorph/error.hpp"
#include "demorph/random.hpp"
#include "demorph/synthetic.hpp"

namespace demorph::training {

using nlohmann::json;

namespace {

constexpr const char* kModule = "training";
constexpr std::int64_t kCheckpointFormat = 1;

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCategory::config, kModule, where + " must be an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* key : allowed) known = known || item.key() == key;
    if (!known) throw Error(ErrorCategory::config, kModule, "unknown config key '" + where + item.key() + "'");
  }
}

template <class T>
void get_to(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::config, kModule, "bad value for '" + where + key + "': " + e.what());
  }
}

void get_path(const json& j, const char* key, std::filesystem::path& out, const std::string& where) {
  std::string text = out.string();
  get_to(j, key, text, where);
  out = text;
}

void set_requires_grad(nets::Networks& n, bool enabled) {
  nets::set_requires_grad(*n.critic, enabled);
  nets::set_requires_grad(*n.patch1, enabled);
  nets::set_requires_grad(*n.patch2, enabled);
}

losses::PairScorer critic_scorer(nets::DecompositionCritic& critic) {
  return [critic](const torch::Tensor& a, const torch::Tensor& b) mutable { return critic->logits(a, b); };
}

losses::PatchScorer patch_scorer(nets::PatchDiscriminator& d) {
  return [d](const torch::Tensor& c, const torch::Tensor& x) mutable { return d->logits(c, x); };
}

losses::DistanceFn distance_fn(nets::Comparator& comparator) {
  return [comparator](const torch::Tensor& a, const torch::Tensor& b) mutable { return comparator->distance(a, b); };
}

torch::Tensor u64_tensor(std::uint64_t v) {
  return torch::tensor(std::vector<std::int64_t>{std::bit_cast<std::int64_t>(v)}, torch::kInt64);
}

std::uint64_t read_u64(torch::serialize::InputArchive& archive, const char* key) {
  torch::Tensor t;
  archive.read(key, t);
  return std::bit_cast<std::uint64_t>(t.item<std::int64_t>());
}

double read_double(torch::serialize::InputArchive& archive, const char* key) {
  torch::Tensor t;
  archive.read(key, t);
  return t.item<double>();
}

void write_module(torch::serialize::OutputArchive& root, const char* key, const torch::nn::Module& module) {
  torch::serialize::OutputArchive sub;
  module.save(sub);
  root.write(key, sub);
}

void write_optimizer(torch::serialize::OutputArchive& root, const char* key, const torch::optim::Optimizer& opt) {
  torch::serialize::OutputArchive sub;
  opt.save(sub);
  root.write(key, sub);
}

void read_module(torch::serialize::InputArchive& root, const char* key, torch::nn::Module& module) {
  torch::serialize::InputArchive sub;
  root.read(key, sub);
  module.load(sub);
}

void read_optimizer(torch::serialize::InputArchive& root, const char* key, torch::optim::Optimizer& opt) {
  torch::serialize::InputArchive sub;
  root.read(key, sub);
  opt.load(sub);
}

struct CheckpointHeader {
  TrainConfig config;
  int epoch = 0;
  std::int64_t step = 0;
  std::uint64_t rng_state = 0;
  std::optional<double> beta_b_effective;
};

CheckpointHeader read_header(torch::serialize::InputArchive& archive) {
  CheckpointHeader h;
  if (read_u64(archive, "format") != static_cast<std::uint64_t>(kCheckpointFormat)) {
    throw Error(ErrorCategory::checkpoint, kModule, "unsupported checkpoint format");
  }
  c10::IValue config;
  archive.read("config", config);
  h.config = train_config_from_json(json::parse(config.toStringRef()));
  h.epoch = static_cast<int>(read_u64(archive, "epoch"));
  h.step = static_cast<std::int64_t>(read_u64(archive, "step"));
  h.rng_state = read_u64(archive, "rng_state");
  if (read_u64(archive, "has_beta_b_effective") != 0) h.beta_b_effective = read_double(archive, "beta_b_effective");
  return h;
}

template <class F>
auto with_checkpoint_errors(const std::filesystem::path& path, F&& body) {
  try {
    return body();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    std::string what = e.what();
    what = what.substr(0, what.find('\n'));
    throw Error(ErrorCategory::checkpoint, kModule, "cannot load checkpoint " + path.string() + ": " + what);
  }
}

void load_networks(torch::serialize::InputArchive& archive, nets::Networks& n) {
  read_module(archive, "generator", *n.generator);
  read_module(archive, "critic", *n.critic);
  read_module(archive, "patch1", *n.patch1);
  read_module(archive, "patch2", *n.patch2);
  read_module(archive, "comparator", *n.comparator);
  nets::freeze(*n.comparator);
}

std::unique_ptr<torch::optim::Adam> adam(std::vector<torch::Tensor> params, const TrainConfig& c) {
  return std::make_unique<torch::optim::Adam>(
      std::move(params), torch::optim::AdamOptions(c.learning_rate).betas({c.adam_beta1, c.adam_beta2}));
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCategory::config, kModule, m); };
  if (epochs < 0) fail("epochs must be nonnegative");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (image_size < 8) fail("image_size must be at least 8");
  if (checkpoint_every < 1) fail("checkpoint_every must be at least 1");
  if (comparator.mode != "pretrain" && comparator.mode != "random" && comparator.mode != "file") {
    fail("comparator.mode must be one of pretrain, random, file");
  }
  weights.validate();
  const int unit = 1 << networks.generator.depth;
  if (image_size % unit != 0) {
    fail("image_size " + std::to_string(image_size) + " is not divisible by 2^" +
         std::to_string(networks.generator.depth));
  }
}

json to_json(const TrainConfig& c) {
  const auto& g = c.networks.generator;
  const auto& ct = c.comparator.training;
  return json{
      {"epochs", c.epochs},
      {"learning_rate", c.learning_rate},
      {"adam_beta1", c.adam_beta1},
      {"adam_beta2", c.adam_beta2},
      {"batch_size", c.batch_size},
      {"image_size", c.image_size},
      {"seed", c.seed},
      {"deterministic", c.deterministic},
      {"shuffle", c.shuffle},
      {"checkpoint_every", c.checkpoint_every},
      {"weights",
       {{"beta_c", c.weights.beta_c},
        {"beta_b", c.weights.beta_b},
        {"beta_m", c.weights.beta_m},
        {"warmup_epochs", c.weights.warmup_epochs},
        {"beta_b_auto_scale", c.beta_b_auto_scale}}},
      {"networks",
       {{"generator_depth", g.depth},
        {"generator_base_width", g.base_width},
        {"critic_width", c.networks.critic_width},
        {"patch_width", c.networks.patch_width},
        {"embedding_dim", c.networks.comparator.embedding_dim},
        {"comparator_width", c.networks.comparator.width}}},
      {"comparator",
       {{"mode", c.comparator.mode},
        {"path", c.comparator.path.string()},
        {"identities", c.comparator.identities},
        {"captures", c.comparator.captures},
        {"steps", ct.steps},
        {"batch_size", ct.batch_size},
        {"learning_rate", ct.learning_rate},
        {"scale", ct.scale},
        {"seed", ct.seed}}},
      {"train_manifest", c.train_manifest.string()},
      {"out_dir", c.out_dir.string()},
  };
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  check_keys(j,
             {"epochs", "learning_rate", "adam_beta1", "adam_beta2", "batch_size", "image_size", "seed",
              "deterministic", "shuffle", "checkpoint_every", "weights", "networks", "comparator", "train_manifest",
              "out_dir"},
             "");
  get_to(j, "epochs", c.epochs, "");
  get_to(j, "learning_rate", c.learning_rate, "");
  get_to(j, "adam_beta1", c.adam_beta1, "");
  get_to(j, "adam_beta2", c.adam_beta2, "");
  get_to(j, "batch_size", c.batch_size, "");
  get_to(j, "image_size", c.image_size, "");
  get_to(j, "seed", c.seed, "");
  get_to(j, "deterministic", c.deterministic, "");
  get_to(j, "shuffle", c.shuffle, "");
  get_to(j, "checkpoint_every", c.checkpoint_every, "");
  get_path(j, "train_manifest", c.train_manifest, "");
  get_path(j, "out_dir", c.out_dir, "");
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    check_keys(w, {"beta_c", "beta_b", "beta_m", "warmup_epochs", "beta_b_auto_scale"}, "weights.");
    get_to(w, "beta_c", c.weights.beta_c, "weights.");
    get_to(w, "beta_b", c.weights.beta_b, "weights.");
    get_to(w, "beta_m", c.weights.beta_m, "weights.");
    get_to(w, "warmup_epochs", c.weights.warmup_epochs, "weights.");
    get_to(w, "beta_b_auto_scale", c.beta_b_auto_scale, "weights.");
  }
  if (j.contains("networks")) {
    const auto& n = j.at("networks");
    check_keys(n,
               {"generator_depth", "generator_base_width", "critic_width", "patch_width", "embedding_dim",
                "comparator_width"},
               "networks.");
    get_to(n, "generator_depth", c.networks.generator.depth, "networks.");
    get_to(n, "generator_base_width", c.networks.generator.base_width, "networks.");
    get_to(n, "critic_width", c.networks.critic_width, "networks.");
    get_to(n, "patch_width", c.networks.patch_width, "networks.");
    get_to(n, "embedding_dim", c.networks.comparator.embedding_dim, "networks.");
    get_to(n, "comparator_width", c.networks.comparator.width, "networks.");
  }
  if (j.contains("comparator")) {
    const auto& m = j.at("comparator");
    check_keys(m,
               {"mode", "path", "identities", "captures", "steps", "batch_size", "learning_rate", "scale", "seed"},
               "comparator.");
    get_to(m, "mode", c.comparator.mode, "comparator.");
    get_path(m, "path", c.comparator.path, "comparator.");
    get_to(m, "identities", c.comparator.identities, "comparator.");
    get_to(m, "captures", c.comparator.captures, "comparator.");
    get_to(m, "steps", c.comparator.training.steps, "comparator.");
    get_to(m, "batch_size", c.comparator.training.batch_size, "comparator.");
    get_to(m, "learning_rate", c.comparator.training.learning_rate, "comparator.");
    get_to(m, "scale", c.comparator.training.scale, "comparator.");
    get_to(m, "seed", c.comparator.training.seed, "comparator.");
  }
  return c;
}

std::string config_hash(const TrainConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(config).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void enable_deterministic_mode(std::uint64_t seed) {
  torch::manual_seed(seed);
  torch::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(true, false);
}

ManifestSource::ManifestSource(std::vector<data::SampleRecord> records, data::LoaderOptions options)
    : records_(std::move(records)), options_(std::move(options)) {}

data::Batch ManifestSource::load(const std::vector<std::size_t>& indices) const {
  return data::load_batch(records_, indices, options_);
}

void MemorySource::add(Image input, Image gt1, Image gt2, data::Label label) {
  if (!input.same_shape(gt1) || !input.same_shape(gt2)) {
    throw Error(ErrorCategory::structural, kModule, "sample images must share dims");
  }
  inputs_.push_back(std::move(input));
  gt1_.push_back(std::move(gt1));
  gt2_.push_back(std::move(gt2));
  labels_.push_back(label);
}

data::Batch MemorySource::load(const std::vector<std::size_t>& indices) const {
  data::Batch batch;
  for (std::size_t i : indices) {
    batch.inputs.push_back(inputs_.at(i));
    batch.gt1.push_back(gt1_.at(i));
    batch.gt2.push_back(gt2_.at(i));
    batch.labels.push_back(labels_.at(i));
    batch.indices.push_back(i);
  }
  return batch;
}

nets::Comparator prepare_comparator(const TrainConfig& config) {
  nets::Comparator comparator(config.networks.comparator);
  const auto& setup = config.comparator;
  if (setup.mode == "file") {
    with_checkpoint_errors(setup.path, [&] {
      torch::serialize::InputArchive archive;
      archive.load_from(setup.path.string());
      comparator->load(archive);
      return 0;
    });
  } else if (setup.mode == "pretrain") {
    std::mt19937_64 rng(setup.training.seed);
    std::vector<Image> images;
    std::vector<int> identities;
    for (int id = 0; id < setup.identities; ++id) {
      const auto identity = random_identity(rng);
      for (int k = 0; k < setup.captures; ++k) {
        images.push_back(render_face(identity, config.image_size, static_cast<std::uint64_t>(k)).image);
        identities.push_back(id);
      }
    }
    nets::train_comparator(comparator, images, identities, setup.training);
  }
  nets::freeze(*comparator);
  return comparator;
}

Trainer::Trainer(Uninitialised, TrainConfig config, std::shared_ptr<const SampleSource> source)
    : config_(std::move(config)), source_(std::move(source)) {
  config_.validate();
  if (!source_ || source_->size() == 0) throw Error(ErrorCategory::data, kModule, "training set is empty");
  if (config_.deterministic) enable_deterministic_mode(config_.seed);
  torch::manual_seed(config_.seed);
  auto spec = config_.networks;
  spec.generator.image_size = config_.image_size;
  nets_ = nets::build_networks(spec);
  if (!config_.out_dir.empty()) log_ = std::make_unique<losses::LossLog>(config_.out_dir / "train_log.csv");
}

Trainer::Trainer(TrainConfig config, std::shared_ptr<const SampleSource> source)
    : Trainer(Uninitialised{}, std::move(config), std::move(source)) {
  nets_.comparator = prepare_comparator(config_);
  rng_state_ = config_.seed;
  build_optimizers();
}

void Trainer::build_optimizers() {
  opt_generator_ = adam(nets_.generator->parameters(), config_);
  opt_critic_ = adam(nets_.critic->parameters(), config_);
  opt_patch1_ = adam(nets_.patch1->parameters(), config_);
  opt_patch2_ = adam(nets_.patch2->parameters(), config_);
}

Trainer Trainer::resume(const std::filesystem::path& checkpoint, std::shared_ptr<const SampleSource> source,
                        std::optional<int> epochs, std::optional<std::filesystem::path> out_dir) {
  return with_checkpoint_errors(checkpoint, [&] {
    torch::serialize::InputArchive archive;
    archive.load_from(checkpoint.string());
    auto header = read_header(archive);
    if (epochs) header.config.epochs = *epochs;
    if (out_dir) header.config.out_dir = *out_dir;
    Trainer t(Uninitialised{}, header.config, std::move(source));
    load_networks(archive, t.nets_);
    t.build_optimizers();
    read_optimizer(archive, "opt_generator", *t.opt_generator_);
    read_optimizer(archive, "opt_critic", *t.opt_critic_);
    read_optimizer(archive, "opt_patch1", *t.opt_patch1_);
    read_optimizer(archive, "opt_patch2", *t.opt_patch2_);
    t.epoch_ = header.epoch;
    t.step_ = header.step;
    t.rng_state_ = header.rng_state;
    t.beta_b_effective_ = header.beta_b_effective;
    return t;
  });
}

StepResult Trainer::step(const data::Batch& batch) {
  if (batch.size() == 0) throw Error(ErrorCategory::data, kModule, "empty batch");
  auto& n = nets_;
  const auto x = nets::stack_images(batch.inputs);
  const auto i1 = nets::stack_images(batch.gt1);
  const auto i2 = nets::stack_images(batch.gt2);

  n.generator->train();
  const auto [o1, o2] = n.generator->decompose(x);
  const auto recon = losses::crossroad_reconstruction_loss(i1, i2, o1, o2);
  const auto [r1, r2] = losses::route_outputs(o1, o2, recon.swapped);

  SplitMix64 rng(rng_state_);
  const double mix = rng.uniform();
  rng_state_ = rng.state();

  // Discriminator phase: outputs are detached inside the d-losses.
  StepResult result;
  set_requires_grad(n, true);
  {
    const auto d_c = losses::critic_d_loss(i1, i2, o1, o2, critic_scorer(n.critic), mix);
    const auto d_m = losses::markovian_d_loss(i1, i2, r1, r2, x, patch_scorer(n.patch1), patch_scorer(n.patch2));
    result.critic_d_loss = d_c.item<double>();
    result.markovian_d_loss = d_m.item<double>();
    losses::check_finite(result.critic_d_loss, "critic discriminator");
    losses::check_finite(result.markovian_d_loss, "Markovian discriminator");
    opt_critic_->zero_grad();
    opt_patch1_->zero_grad();
    opt_patch2_->zero_grad();
    (d_c + d_m).backward();
    opt_critic_->step();
    opt_patch1_->step();
    opt_patch2_->step();
  }
  if (observer_) observer_(Phase::discriminators_updated, *this);

  // Generator phase with every discriminator frozen.
  set_requires_grad(n, false);
  const auto bio = losses::crossroad_biometric_loss(i1, i2, o1, o2, distance_fn(n.comparator));
  const auto g_c = losses::critic_g_loss(o1, o2, critic_scorer(n.critic));
  const auto g_m = losses::markovian_g_loss(r1, r2, x, patch_scorer(n.patch1), patch_scorer(n.patch2));

  const losses::LossParts parts{recon.value.item<double>(), g_c.item<double>(), bio.value.item<double>(),
                                g_m.item<double>(), recon.majority()};
  if (config_.beta_b_auto_scale && !beta_b_effective_) {
    beta_b_effective_ = parts.l_b > 0.0 ? parts.l_r / parts.l_b : config_.weights.beta_b;
  }
  auto weights = config_.weights;
  if (beta_b_effective_) weights.beta_b = *beta_b_effective_;
  result.breakdown = losses::total_loss(parts, weights, epoch_);
  result.swapped = recon.swapped_count();

  const auto total = losses::compose_total(recon.value, g_c, bio.value, g_m, result.breakdown.betas);
  opt_generator_->zero_grad();
  total.backward();
  opt_generator_->step();
  set_requires_grad(n, true);
  if (observer_) observer_(Phase::generator_updated, *this);

  if (log_) log_->append(epoch_, step_, result.breakdown);
  ++step_;
  return result;
}

EpochSummary Trainer::run_epoch() {
  const auto order = data::epoch_order(source_->size(), config_.shuffle, rng_state_);
  EpochSummary s;
  s.epoch = epoch_;
  for (const auto& indices : data::make_batches(order, static_cast<std::size_t>(config_.batch_size))) {
    const auto r = step(source_->load(indices));
    s.l_r += r.breakdown.l_r;
    s.l_c += r.breakdown.l_c;
    s.l_b += r.breakdown.l_b;
    s.l_m += r.breakdown.l_m;
    s.total += r.breakdown.total;
    ++s.steps;
  }
  const double k = static_cast<double>(s.steps);
  s.l_r /= k;
  s.l_c /= k;
  s.l_b /= k;
  s.l_m /= k;
  s.total /= k;
  ++epoch_;
  history_.push_back(s);
  return s;
}

std::filesystem::path Trainer::checkpoint_path_for(int completed_epochs) const {
  char name[64];
  std::snprintf(name, sizeof name, "checkpoint_epoch_%04d.pt", completed_epochs);
  return config_.out_dir / "checkpoints" / name;
}

std::vector<EpochSummary> Trainer::run() {
  std::vector<EpochSummary> out;
  while (epoch_ < config_.epochs) {
    out.push_back(run_epoch());
    const bool cadence = epoch_ % config_.checkpoint_every == 0;
    if (!config_.out_dir.empty() && (cadence || epoch_ == config_.epochs)) {
      save_checkpoint(checkpoint_path_for(epoch_));
    }
  }
  return out;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  torch::serialize::OutputArchive archive;
  archive.write("format", u64_tensor(kCheckpointFormat));
  archive.write("config", c10::IValue(to_json(config_).dump()));
  archive.write("epoch", u64_tensor(static_cast<std::uint64_t>(epoch_)));
  archive.write("step", u64_tensor(static_cast<std::uint64_t>(step_)));
  archive.write("rng_state", u64_tensor(rng_state_));
  archive.write("has_beta_b_effective", u64_tensor(beta_b_effective_ ? 1 : 0));
  archive.write("beta_b_effective",
                torch::tensor(std::vector<double>{beta_b_effective_.value_or(0.0)}, torch::kFloat64));
  write_module(archive, "generator", *nets_.generator);
  write_module(archive, "critic", *nets_.critic);
  write_module(archive, "patch1", *nets_.patch1);
  write_module(archive, "patch2", *nets_.patch2);
  write_module(archive, "comparator", *nets_.comparator);
  write_optimizer(archive, "opt_generator", *opt_generator_);
  write_optimizer(archive, "opt_critic", *opt_critic_);
  write_optimizer(archive, "opt_patch1", *opt_patch1_);
  write_optimizer(archive, "opt_patch2", *opt_patch2_);
  // Write then rename so an interrupted save never clobbers a good checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  archive.save_to(tmp.string());
  std::filesystem::rename(tmp, path);

  auto meta_path = path;
  meta_path.replace_extension(".meta.txt");
  std::ofstream meta(meta_path);
  meta << "epoch " << epoch_ << '\n' << "step " << step_ << '\n' << "config_hash " << config_hash(config_) << '\n';
  if (!history_.empty()) {
    const auto& h = history_.back();
    meta << "L_R " << csv::format_double(h.l_r) << '\n'
         << "L_C " << csv::format_double(h.l_c) << '\n'
         << "L_B " << csv::format_double(h.l_b) << '\n'
         << "L_M " << csv::format_double(h.l_m) << '\n'
         << "total " << csv::format_double(h.total) << '\n';
  }
  if (!meta) throw Error(ErrorCategory::io, kModule, "cannot write " + meta_path.string());
}

LoadedModel load_model(const std::filesystem::path& checkpoint) {
  if (!std::filesystem::exists(checkpoint)) {
    throw Error(ErrorCategory::io, kModule, "checkpoint not found: " + checkpoint.string());
  }
  return with_checkpoint_errors(checkpoint, [&] {
    torch::serialize::InputArchive archive;
    archive.load_from(checkpoint.string());
    const auto header = read_header(archive);
    LoadedModel model;
    model.config = header.config;
    model.epoch = header.epoch;
    auto spec = header.config.networks;
    spec.generator.image_size = header.config.image_size;
    model.nets = nets::build_networks(spec);
    load_networks(archive, model.nets);
    return model;
  });
}

DemorphResult demorph(nets::Networks& nets, const Image& x) {
  torch::NoGradGuard no_grad;
  nets.generator->eval();
  const auto input = nets::to_tensor(x).unsqueeze(0);
  const auto [o1, o2] = nets.generator->decompose(input);
  const auto dist = nets.comparator->distance(torch::cat({o1, o2, o1}), torch::cat({input, input, o2}));
  DemorphResult r;
  r.o1 = nets::to_image(o1[0]);
  r.o2 = nets::to_image(o2[0]);
  r.d_o1_x = dist[0].item<double>();
  r.d_o2_x = dist[1].item<double>();
  r.d_o1_o2 = dist[2].item<double>();
  return r;
}

DemorphResult demorph(LoadedModel& model, const Image& x) {
  if (x.height() != model.config.image_size || x.width() != model.config.image_size) {
    throw Error(ErrorCategory::structural, kModule,
                "input is " + std::to_string(x.height()) + "x" + std::to_string(x.width()) + ", model expects " +
                    std::to_string(model.config.image_size) + "x" + std::to_string(model.config.image_size));
  }
  return demorph(model.nets, x);
}

}  // namespace demorph::training
