#include "scanfill/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "scanfill/checkpoint.hpp"
#include "scanfill/errors.hpp"
#include "scanfill/image_io.hpp"
#include "scanfill/ops.hpp"
#include "scanfill/ply.hpp"

namespace scanfill {

using ad::Tensorf;
namespace fs = std::filesystem;

namespace {

const char* const kCsvHeader = "epoch,l_part,l_rend,l_dens,l_gen,l_disc,seconds";

std::vector<TrainSample> checked_samples(const TrainConfig& c) {
  c.validate();
  auto s = load_split(c.root, c.category, "train", c.prn.encodings, c.max_samples);
  if (s.empty()) throw IoError("no training samples under " + (c.root / c.category / "train").string());
  for (const auto& t : s) {
    if (t.p_in.dim(0) != c.prn.n_in) {
      throw ShapeError("sample " + t.id + " has " + std::to_string(t.p_in.dim(0)) + " points but prn.n_in is " +
                       std::to_string(c.prn.n_in));
    }
  }
  return s;
}

ImageBank checked_bank(const TrainConfig& c) {
  auto bank = read_bank(c.root / c.category);
  if (bank.size() == 0) throw IoError("empty image bank in " + (c.root / c.category / "bank.json").string());
  if (c.dare && !(bank.eta > 0)) throw IoError("bank.json of " + c.category + " has no positive eta");
  return bank;
}

void require_finite(double v, const char* what, const std::string& id, std::size_t epoch) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string("non-finite ") + what + " at sample " + id + " in epoch " +
                       std::to_string(epoch));
  }
}

Tensorf mean_of(const std::vector<Tensorf>& terms) {
  Tensorf acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
  return ad::mul_scalar(acc, 1.0f / static_cast<float>(terms.size()));
}

void write_row(std::ostream& os, const EpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n", r.epoch, r.l_part, r.l_rend, r.l_dens,
                r.l_gen, r.l_disc, r.seconds);
  os << buf;
}

void export_moments(NamedTensors& out, ad::Adam<float>& opt, const std::string& prefix) {
  for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
    out.emplace_back(prefix + ".m." + std::to_string(i), opt.first_moments()[i]);
    out.emplace_back(prefix + ".v." + std::to_string(i), opt.second_moments()[i]);
  }
}

void import_moments(const NamedTensors& in, ad::Adam<float>& opt, const std::string& prefix) {
  auto copy = [&](const std::string& name, Tensorf& dst) {
    const auto& src = find_tensor(in, name);
    if (src.shape() != dst.shape()) throw ShapeError("checkpoint entry " + name + " does not match the model");
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
  };
  for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
    copy(prefix + ".m." + std::to_string(i), opt.first_moments()[i]);
    copy(prefix + ".v." + std::to_string(i), opt.second_moments()[i]);
  }
}

}  // namespace

void TrainConfig::validate() const {
  prn.validate();
  splat.validate();
  for (double a : {weights.alpha_part, weights.alpha_rend, weights.alpha_dens, weights.alpha_gen})
    if (!(a >= 0)) throw ConfigError("loss weights must be nonnegative");
  if (!(lr > 0)) throw ConfigError("train.lr must be positive");
  if (!(lr_decay > 0)) throw ConfigError("train.lr_decay must be positive");
  if (decay_every == 0) throw ConfigError("train.decay_every must be at least 1");
  if (batch_size == 0) throw ConfigError("train.batch_size must be at least 1");
  if (checkpoint_every == 0) throw ConfigError("train.checkpoint_every must be at least 1");
  if (k_density == 0) throw ConfigError("loss.k_density must be at least 1");
}

std::vector<TrainSample> load_split(const fs::path& root, const std::string& category, const std::string& split,
                                    const EncodingParams& encodings, std::size_t max_samples) {
  const fs::path dir = root / category / split;
  if (!fs::is_directory(dir)) throw IoError("missing split directory " + dir.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) ids.push_back(e.path().filename().string());
  std::sort(ids.begin(), ids.end());
  if (max_samples > 0 && ids.size() > max_samples) ids.resize(max_samples);

  std::vector<TrainSample> out(ids.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(ids.size()); ++i) {
    try {
      auto& s = out[i];
      const fs::path d = dir / ids[i];
      s.id = ids[i];
      s.camera = read_camera(d / "camera.json");
      const PointCloud partial = read_ply(d / "partial.ply");
      s.p_in = to_tensor<float>(partial);
      s.s0 = to_tensor<float>(read_pgm(d / "mask.pgm"));
      if (s.s0.dim(0) != s.camera.height || s.s0.dim(1) != s.camera.width) {
        throw IoError((d / "mask.pgm").string() + ": size does not match camera.json");
      }
      s.encodings = compute_encodings(partial, encodings, NormalOrientation{s.camera.center()});
    } catch (...) {
#pragma omp critical(scanfill_load_split)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return out;
}

Trainer::Trainer(const TrainConfig& config)
    : config_(config),
      samples_(checked_samples(config)),
      bank_(checked_bank(config)),
      g_(config.prn, derive_seed(config.seed, 1)),
      d_(config.disc, bank_.maps.front().height, bank_.maps.front().width, derive_seed(config.seed, 2)),
      opt_g_(nn::parameters(g_), ad::AdamConfig{config.lr}),
      opt_d_(nn::parameters(d_), ad::AdamConfig{config.lr}) {
  for (const auto& s : samples_) {
    if (s.camera.width != d_.width() || s.camera.height != d_.height()) {
      throw ShapeError("sample " + s.id + " resolution differs from the image bank");
    }
  }
}

double Trainer::render_eta() const { return bank_.eta; }

Camera Trainer::fake_view(std::size_t epoch, std::size_t sample) const {
  std::mt19937_64 rng(derive_seed(derive_seed(config_.seed, 3, epoch), sample));
  return sample_viewpoint(rng, config_.views, d_.width(), d_.height());
}

EpochRecord Trainer::run_epoch() {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t e = ++epoch_;
  const double lr = ad::step_decay_lr(config_.lr, config_.lr_decay, config_.decay_every, e - 1);
  opt_g_.set_lr(lr);
  opt_d_.set_lr(lr);

  std::vector<std::size_t> order(samples_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(config_.seed, 4, e));
  std::shuffle(order.begin(), order.end(), rng);
  RealSampler real_sampler(bank_.size(), derive_seed(config_.seed, 5, e));

  const bool adversarial = config_.weights.alpha_gen > 0;
  const std::size_t h = d_.height(), w = d_.width();
  auto draw = [&](const Tensorf& points, const Camera& cam) {
    return config_.dare ? render_dare(points, cam, config_.splat, render_eta()) : render(points, cam, config_.splat);
  };

  EpochRecord rec;
  rec.epoch = e;
  std::size_t batches = 0;
  const std::size_t batch = std::min(config_.batch_size, bank_.size());
  for (std::size_t begin = 0; begin < order.size(); begin += batch, ++batches) {
    const std::size_t end = std::min(order.size(), begin + batch);
    ad::Tape tape;
    ad::TapeGuard guard(tape);
    std::vector<Tensorf> parts, rends, denss, fakes;
    for (std::size_t k = begin; k < end; ++k) {
      const auto& s = samples_[order[k]];
      try {
      ForwardOptions fo;
      fo.input_encodings = &s.encodings;
      fo.viewpoint = s.camera.center();
      const auto out = g_.forward(s.p_in, fo);
      parts.push_back(partial_matching_loss(s.p_in, out.coarse, out.out, config_.squared_ucd));
      rends.push_back(rendering_loss(s.s0, draw(out.out, s.camera).silhouette, draw(out.coarse, s.camera).silhouette,
                                     config_.mask_threshold));
      denss.push_back(density_loss(out.out, config_.k_density));
      require_finite(parts.back().item(), "l_part", s.id, e);
      require_finite(rends.back().item(), "l_rend", s.id, e);
      require_finite(denss.back().item(), "l_dens", s.id, e);
      {
        ad::NoGradGuard no_grad;
        rec.ucd_out += ucd(s.p_in, out.out, config_.squared_ucd).item();
      }
      if (adversarial) {
        const auto depth = draw(out.out, fake_view(e, order[k])).depth;
        const auto fake = ad::reshape(normalize_depth(depth, config_.views.distance), ad::Shape{1, h, w});
        const auto v = fake.data();
        if (!std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); }))
          require_finite(NAN, "rendered depth", s.id, e);
        fakes.push_back(fake);
      }
      } catch (const InvalidInput& ex) {
        // Degenerate predictions (non-finite or behind the camera) end the run.
        throw NumericError("invalid prediction at sample " + s.id + " in epoch " + std::to_string(e) + ": " +
                           ex.what());
      }
    }
    const auto l_part = mean_of(parts), l_rend = mean_of(rends), l_dens = mean_of(denss);
    Tensorf l_gen = Tensorf::scalar(0.0f);
    const std::string& first_id = samples_[order[begin]].id;
    if (adversarial) {
      const auto fake = ad::concat(fakes, 0);
      {
        ad::Tape d_tape;
        ad::TapeGuard d_guard(d_tape);
        const auto real = stack_real<float>(bank_, real_sampler.next(end - begin), config_.views.distance);
        const auto l_disc = disc_loss(d_(real), d_(fake.detach()));
        require_finite(l_disc.item(), "l_disc", first_id, e);
        ad::backward(l_disc);
        opt_d_.step();
        rec.l_disc += l_disc.item();
      }
      l_gen = gen_adv_loss(d_(fake));
      require_finite(l_gen.item(), "l_gen", first_id, e);
    }
    const auto total = total_gen_loss(l_part, l_rend, l_dens, l_gen, config_.weights);
    require_finite(total.item(), "generator loss", first_id, e);
    ad::backward(total);
    opt_g_.step();
    opt_d_.zero_grad();

    const double n = static_cast<double>(end - begin);
    rec.l_part += l_part.item() * n;
    rec.l_rend += l_rend.item() * n;
    rec.l_dens += l_dens.item() * n;
    rec.l_gen += l_gen.item() * n;
  }
  const double n = static_cast<double>(samples_.size());
  rec.l_part /= n;
  rec.l_rend /= n;
  rec.l_dens /= n;
  rec.l_gen /= n;
  rec.ucd_out /= n;
  rec.l_disc /= static_cast<double>(batches);
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

std::vector<EpochRecord> Trainer::train(const std::function<void(const EpochRecord&)>& on_epoch) {
  fs::create_directories(config_.out_dir);
  const fs::path csv = config_.out_dir / "losses.csv";
  // A resumed run keeps the rows up to its checkpoint.
  std::vector<std::string> kept;
  if (epoch_ > 0 && fs::exists(csv)) {
    std::ifstream is(csv);
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      if (!line.empty() && std::stoul(line.substr(0, line.find(','))) <= epoch_) kept.push_back(line);
    }
  }
  std::ofstream os(csv, std::ios::trunc);
  if (!os) throw IoError("cannot write " + csv.string());
  os << kCsvHeader << '\n';
  for (const auto& l : kept) os << l << '\n';
  os.flush();

  std::vector<EpochRecord> records;
  while (epoch_ < config_.epochs) {
    records.push_back(run_epoch());
    write_row(os, records.back());
    os.flush();
    if (!os) throw IoError("cannot write " + csv.string());
    if (on_epoch) on_epoch(records.back());
    if (epoch_ % config_.checkpoint_every == 0) save(checkpoint_path(config_.out_dir, epoch_));
  }
  save(final_checkpoint_path(config_.out_dir));
  return records;
}

void Trainer::save(const fs::path& path) {
  auto tensors = nn::export_parameters(g_, "g.");
  for (auto& t : nn::export_parameters(d_, "d.")) tensors.push_back(std::move(t));
  export_moments(tensors, opt_g_, "opt_g");
  export_moments(tensors, opt_d_, "opt_d");
  tensors.emplace_back("state", Tensorf({3}, {static_cast<float>(epoch_), static_cast<float>(opt_g_.steps()),
                                              static_cast<float>(opt_d_.steps())}));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_checkpoint(path, tensors);
}

void Trainer::load(const fs::path& path) {
  const auto tensors = load_checkpoint(path);
  nn::import_parameters(g_, tensors, "g.");
  nn::import_parameters(d_, tensors, "d.");
  import_moments(tensors, opt_g_, "opt_g");
  import_moments(tensors, opt_d_, "opt_d");
  const auto state = find_tensor(tensors, "state").data();
  if (state.size() != 3) throw IoError(path.string() + ": malformed state entry");
  epoch_ = static_cast<std::size_t>(state[0]);
  opt_g_.set_steps(static_cast<std::size_t>(state[1]));
  opt_d_.set_steps(static_cast<std::size_t>(state[2]));
}

fs::path checkpoint_path(const fs::path& out_dir, std::size_t epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", epoch);
  return out_dir / name;
}

fs::path final_checkpoint_path(const fs::path& out_dir) { return out_dir / "final.ckpt"; }

void load_generator(Prn<float>& g, const fs::path& checkpoint) {
  nn::import_parameters(g, load_checkpoint(checkpoint), "g.");
}

}  // namespace scanfill
