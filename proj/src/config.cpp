#include "scanfill/config.hpp"

#include <fstream>
#include <sstream>

#include "scanfill/errors.hpp"

namespace scanfill {

using nlohmann::json;

namespace {

template <typename T>
T convert(const json& j, const std::string& key);

template <>
double convert<double>(const json& j, const std::string& key) {
  if (!j.is_number()) throw ConfigError(key + ": expected a number");
  return j.get<double>();
}

template <>
std::size_t convert<std::size_t>(const json& j, const std::string& key) {
  if (j.is_number_unsigned()) return j.get<std::size_t>();
  if (j.is_number_integer() && j.get<long long>() >= 0) return static_cast<std::size_t>(j.get<long long>());
  throw ConfigError(key + ": expected a nonnegative integer");
}

template <>
bool convert<bool>(const json& j, const std::string& key) {
  if (!j.is_boolean()) throw ConfigError(key + ": expected true or false");
  return j.get<bool>();
}

template <>
std::filesystem::path convert<std::filesystem::path>(const json& j, const std::string& key) {
  if (!j.is_string()) throw ConfigError(key + ": expected a path string");
  return j.get<std::string>();
}

template <>
std::vector<Category> convert<std::vector<Category>>(const json& j, const std::string& key) {
  std::vector<Category> out;
  if (j.is_string()) {
    std::stringstream ss(j.get<std::string>());
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_category(item, key));
  } else if (j.is_array()) {
    for (const auto& e : j) {
      if (!e.is_string()) throw ConfigError(key + ": expected category names");
      out.push_back(parse_category(e.get<std::string>(), key));
    }
  } else {
    throw ConfigError(key + ": expected a list of categories");
  }
  if (out.empty()) throw ConfigError(key + ": must name at least one category");
  return out;
}

json to_json_value(double v) { return v; }
json to_json_value(std::size_t v) { return v; }
json to_json_value(bool v) { return v; }
json to_json_value(const std::filesystem::path& v) { return v.string(); }
json to_json_value(const std::vector<Category>& v) {
  json a = json::array();
  for (auto c : v) a.push_back(to_string(c));
  return a;
}

template <typename T, typename Access>
ConfigField field(std::string key, std::string help, Access access) {
  ConfigField f;
  f.key = key;
  f.help = std::move(help);
  f.set = [access, key](RunConfig& c, const json& j) { access(c) = convert<T>(j, key); };
  f.get = [access](const RunConfig& c) { return to_json_value(access(const_cast<RunConfig&>(c))); };
  return f;
}

#define SF_FIELD(T, KEY, MEMBER, HELP) field<T>(KEY, HELP, [](RunConfig& c) -> T& { return c.MEMBER; })

std::vector<ConfigField> build_fields() {
  using std::size_t;
  using Path = std::filesystem::path;
  using Cats = std::vector<Category>;
  return {
      SF_FIELD(Path, "data.root", data.root, "dataset directory"),
      SF_FIELD(Cats, "data.categories", data.categories, "comma-separated categories (table, lamp, hull)"),
      SF_FIELD(size_t, "data.n_train", data.n_train, "training samples per category"),
      SF_FIELD(size_t, "data.n_val", data.n_val, "validation samples per category"),
      SF_FIELD(size_t, "data.n_test", data.n_test, "test samples per category"),
      SF_FIELD(size_t, "data.m_gt", data.m_gt, "ground-truth points per shape"),
      SF_FIELD(size_t, "data.dense_factor", data.dense_factor, "dense scan cloud size as a multiple of m_gt"),
      SF_FIELD(size_t, "data.n_in", data.scan.n_in, "partial points per scan"),
      SF_FIELD(size_t, "data.width", data.scan.width, "depth map width in pixels"),
      SF_FIELD(size_t, "data.height", data.scan.height, "depth map height in pixels"),
      SF_FIELD(size_t, "data.max_attempts", data.scan.max_attempts, "viewpoint draws before giving up on a shape"),
      SF_FIELD(size_t, "prn.n_coarse", prn.n_coarse, "coarse points"),
      SF_FIELD(size_t, "prn.m_out", prn.m_out, "output points (multiple of prn.n_coarse)"),
      SF_FIELD(size_t, "prn.l_retrieve", prn.l_retrieve, "encodings retrieved per coarse point"),
      SF_FIELD(size_t, "prn.global_dim", prn.global_dim, "global feature width"),
      SF_FIELD(size_t, "prn.embed_dim", prn.embed_dim, "attention query/key width"),
      SF_FIELD(double, "prn.offset_scale", prn.offset_scale, "largest refinement offset"),
      SF_FIELD(size_t, "prn.decoder_hidden", prn.decoder_hidden, "coarse decoder hidden width"),
      SF_FIELD(size_t, "prn.attention_hidden", prn.attention_hidden, "query/key MLP hidden width"),
      SF_FIELD(size_t, "prn.refine_hidden", prn.refine_hidden, "refiner hidden width"),
      SF_FIELD(size_t, "prn.k_position", prn.encodings.k_position, "neighbours for position encodings"),
      SF_FIELD(size_t, "prn.k_curvature", prn.encodings.k_curvature, "neighbours for normals and curvature encodings"),
      SF_FIELD(bool, "prn.coarse_only", prn.coarse_only, "decoder only: no retrieval, no refiner"),
      SF_FIELD(bool, "prn.use_position", prn.use_position, "feed retrieved position encodings to the refiner"),
      SF_FIELD(bool, "prn.use_curvature", prn.use_curvature, "feed retrieved curvature encodings to the refiner"),
      SF_FIELD(double, "render.radius", data.scan.splat.radius, "base splat radius r0 (NDC units)"),
      SF_FIELD(size_t, "render.k_blend", data.scan.splat.k_blend, "fragments blended per pixel"),
      SF_FIELD(double, "render.gamma", data.scan.splat.gamma, "splat opacity falloff exponent"),
      SF_FIELD(bool, "render.dare", dare, "density-adaptive splat radius during training"),
      SF_FIELD(double, "render.distance", data.scan.views.distance, "camera distance from the origin"),
      SF_FIELD(double, "render.elevation_min", data.scan.views.elevation_min, "lowest view elevation (degrees)"),
      SF_FIELD(double, "render.elevation_max", data.scan.views.elevation_max, "highest view elevation (degrees)"),
      SF_FIELD(double, "loss.alpha_part", weights.alpha_part, "partial matching weight"),
      SF_FIELD(double, "loss.alpha_rend", weights.alpha_rend, "rendering weight"),
      SF_FIELD(double, "loss.alpha_dens", weights.alpha_dens, "density weight"),
      SF_FIELD(double, "loss.alpha_gen", weights.alpha_gen, "adversarial weight (0 disables the discriminator)"),
      SF_FIELD(size_t, "loss.k_density", k_density, "neighbours in the density loss"),
      SF_FIELD(double, "loss.mask_threshold", mask_threshold, "coarse silhouette foreground threshold"),
      SF_FIELD(bool, "loss.squared_ucd", squared_ucd, "squared distances in the partial matching loss"),
      SF_FIELD(double, "train.lr", lr, "initial learning rate"),
      SF_FIELD(double, "train.lr_decay", lr_decay, "learning rate factor per decay step"),
      SF_FIELD(size_t, "train.decay_every", decay_every, "epochs per decay step"),
      SF_FIELD(size_t, "train.epochs", epochs, "training epochs"),
      SF_FIELD(size_t, "train.batch_size", batch_size, "samples per update"),
      SF_FIELD(size_t, "train.checkpoint_every", checkpoint_every, "epochs between checkpoints"),
      SF_FIELD(size_t, "train.max_samples", max_samples, "cap on training samples per category (0: all)"),
      SF_FIELD(size_t, "seed", seed, "seed for data generation and training"),
      SF_FIELD(Path, "out", out, "output directory for runs"),
  };
}

#undef SF_FIELD

const ConfigField& find_field(const std::string& key) {
  for (const auto& f : config_fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = build_fields();
  return fields;
}

void apply_json(RunConfig& config, const json& flat) {
  if (!flat.is_object()) throw ConfigError("config file must hold a JSON object of dotted keys");
  for (const auto& [key, value] : flat.items()) find_field(key).set(config, value);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunConfig c;
  apply_json(c, j);
  return c;
}

void set_option(RunConfig& config, const std::string& key, const std::string& value) {
  const auto& f = find_field(key);
  const json current = f.get(config);
  json parsed;
  if (current.is_string() || current.is_array()) {
    parsed = value;
  } else if (current.is_boolean()) {
    if (value == "true" || value == "1" || value == "on") parsed = true;
    else if (value == "false" || value == "0" || value == "off") parsed = false;
    else throw ConfigError(key + ": expected true or false, got '" + value + "'");
  } else {
    try {
      parsed = json::parse(value);
    } catch (const json::parse_error&) {
      throw ConfigError(key + ": cannot parse '" + value + "' as a number");
    }
  }
  f.set(config, parsed);
}

json to_json(const RunConfig& config) {
  json j = json::object();
  for (const auto& f : config_fields()) j[f.key] = f.get(config);
  return j;
}

void RunConfig::finalize() {
  prn.n_in = data.scan.n_in;
  data.m_out = prn.m_out;
  data.seed = seed;
  try {
    prn.validate();
    data.scan.splat.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  if (data.categories.empty()) throw ConfigError("data.categories must name at least one category");
  if (data.n_train == 0) throw ConfigError("data.n_train must be at least 1");
  if (data.m_gt < 2) throw ConfigError("data.m_gt must be at least 2");
  if (data.dense_factor == 0) throw ConfigError("data.dense_factor must be at least 1");
  if (data.scan.width < 32 || data.scan.height < 32) throw ConfigError("data.width and data.height must be at least 32");
  if (!(data.scan.views.distance > 1)) throw ConfigError("render.distance must exceed 1");
  if (data.scan.views.elevation_min > data.scan.views.elevation_max)
    throw ConfigError("render.elevation_min exceeds render.elevation_max");
  const std::pair<const char*, double> alphas[] = {{"loss.alpha_part", weights.alpha_part},
                                                   {"loss.alpha_rend", weights.alpha_rend},
                                                   {"loss.alpha_dens", weights.alpha_dens},
                                                   {"loss.alpha_gen", weights.alpha_gen}};
  for (const auto& [name, a] : alphas)
    if (!(a >= 0)) throw ConfigError(std::string(name) + " must be nonnegative");
  if (!(mask_threshold >= 0 && mask_threshold <= 1)) throw ConfigError("loss.mask_threshold must lie in [0, 1]");
  if (k_density == 0) throw ConfigError("loss.k_density must be at least 1");
  if (!(lr > 0)) throw ConfigError("train.lr must be positive");
  if (!(lr_decay > 0)) throw ConfigError("train.lr_decay must be positive");
  if (decay_every == 0) throw ConfigError("train.decay_every must be at least 1");
  if (batch_size == 0) throw ConfigError("train.batch_size must be at least 1");
  if (checkpoint_every == 0) throw ConfigError("train.checkpoint_every must be at least 1");
}

TrainConfig train_config(const RunConfig& config, Category category) {
  TrainConfig t;
  t.root = config.data.root;
  t.category = to_string(category);
  t.out_dir = config.out / t.category;
  t.prn = config.prn;
  t.splat = config.data.scan.splat;
  t.views = config.data.scan.views;
  t.dare = config.dare;
  t.weights = config.weights;
  t.k_density = config.k_density;
  t.mask_threshold = config.mask_threshold;
  t.squared_ucd = config.squared_ucd;
  t.lr = config.lr;
  t.lr_decay = config.lr_decay;
  t.decay_every = config.decay_every;
  t.epochs = config.epochs;
  t.batch_size = config.batch_size;
  t.checkpoint_every = config.checkpoint_every;
  t.max_samples = config.max_samples;
  t.seed = config.seed;
  return t;
}

}  // namespace scanfill
