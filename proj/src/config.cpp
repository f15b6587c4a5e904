#include "physvid/config.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace physvid {
namespace {

using nlohmann::json;

void require_positive(int value, const std::string& field) {
  if (value < 1) throw ConfigError(field, "must be >= 1 (got " + std::to_string(value) + ")");
}

// Each field is declared once here and reused for parsing, printing and fingerprinting.
template <typename Visitor>
void visit_model(ModelConfig& m, Visitor&& v) {
  v("latent_channels", m.latent_channels);
  v("latent_frames", m.latent_frames);
  v("latent_height", m.latent_height);
  v("latent_width", m.latent_width);
  v("text_len", m.text_len);
  v("text_dim", m.text_dim);
  v("phys_tokens", m.phys_tokens);
  v("phys_dim", m.phys_dim);
  v("hidden_dim", m.hidden_dim);
  v("predictor_layers", m.predictor_layers);
  v("predictor_heads", m.predictor_heads);
  v("gen_spatial_blocks", m.gen_spatial_blocks);
  v("gen_temporal_blocks", m.gen_temporal_blocks);
  v("gen_heads", m.gen_heads);
  v("timestep_embed_dim", m.timestep_embed_dim);
  v("vae_downsample", m.vae_downsample);
}

template <typename Visitor>
void visit_train(TrainConfig& t, Visitor&& v) {
  v("lambda_phys", t.lambda_phys);
  v("learning_rate", t.learning_rate);
  v("weight_decay", t.weight_decay);
  v("batch_size", t.batch_size);
  v("max_steps", t.max_steps);
  v("seed", t.seed);
  v("checkpoint_every", t.checkpoint_every);
  v("log_every", t.log_every);
}

json model_json(ModelConfig m) {
  json out = json::object();
  visit_model(m, [&](const char* key, int& value) { out[key] = value; });
  return out;
}

std::string schedule_name(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::kLinear:
      return "linear";
  }
  return "linear";
}

template <typename T>
void read_value(const json& node, const std::string& path, T& out) {
  try {
    if constexpr (std::is_same_v<T, int> || std::is_same_v<T, std::int64_t>) {
      if (!node.is_number_integer()) throw ConfigError(path, "expected an integer");
    } else {
      if (!node.is_number()) throw ConfigError(path, "expected a number");
    }
    out = node.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path, e.what());
  }
}

void apply_section(const json& root, const char* section, const std::vector<std::string>& known,
                   const std::function<void(const std::string&, const json&)>& assign) {
  if (!root.contains(section)) return;
  const json& node = root.at(section);
  if (!node.is_object()) throw ConfigError(section, "expected an object");
  for (const auto& [key, value] : node.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError(std::string(section) + "." + key, "unknown key");
    assign(key, value);
  }
}

}  // namespace

Config preset(std::string_view name) {
  Config c;
  if (name == "toy") return c;
  if (name == "paper") {
    ModelConfig& m = c.model;
    m.latent_channels = 4;
    m.latent_frames = 16;
    m.latent_height = 32;
    m.latent_width = 32;
    m.text_len = 226;
    m.text_dim = 4096;
    m.phys_tokens = 2048;
    m.phys_dim = 1408;
    m.hidden_dim = 512;
    m.predictor_layers = 4;
    m.predictor_heads = 8;
    m.gen_spatial_blocks = 14;
    m.gen_temporal_blocks = 14;
    m.gen_heads = 8;
    m.timestep_embed_dim = 256;
    m.vae_downsample = 8;
    c.diffusion.num_timesteps = 1000;
    c.train.learning_rate = 1e-5;
    c.train.weight_decay = 0.01;
    c.train.lambda_phys = 0.1;
    c.train.batch_size = 1;
    c.train.max_steps = 10000;
    c.train.checkpoint_every = 1000;
    c.train.log_every = 10;
    return c;
  }
  throw ConfigError("preset", "unknown preset '" + std::string(name) + "' (expected toy or paper)");
}

std::vector<std::string> preset_names() { return {"toy", "paper"}; }

void validate(const Config& config) {
  ModelConfig m = config.model;
  visit_model(m, [](const char* key, int& value) { require_positive(value, std::string("model.") + key); });
  auto require_even = [](int value, const char* key) {
    if (value % 2 != 0) throw ConfigError(std::string("model.") + key, "must be even (predictor halves it)");
  };
  require_even(m.latent_frames, "latent_frames");
  require_even(m.latent_height, "latent_height");
  require_even(m.latent_width, "latent_width");
  require_even(m.timestep_embed_dim, "timestep_embed_dim");
  if (m.hidden_dim % m.predictor_heads != 0)
    throw ConfigError("model.predictor_heads", "must divide hidden_dim");
  if (m.hidden_dim % m.gen_heads != 0) throw ConfigError("model.gen_heads", "must divide hidden_dim");

  const DiffusionConfig& d = config.diffusion;
  if (d.num_timesteps < 1) throw ConfigError("diffusion.num_timesteps", "must be >= 1");
  if (!(d.beta_start > 0.0)) throw ConfigError("diffusion.beta_start", "must be > 0");
  if (!(d.beta_start <= d.beta_end)) throw ConfigError("diffusion.beta_end", "must be >= beta_start");
  if (!(d.beta_end < 1.0)) throw ConfigError("diffusion.beta_end", "must be < 1");

  const TrainConfig& t = config.train;
  if (!(t.lambda_phys >= 0.0)) throw ConfigError("train.lambda_phys", "must be >= 0");
  if (!(t.learning_rate > 0.0)) throw ConfigError("train.learning_rate", "must be > 0");
  if (!(t.weight_decay >= 0.0)) throw ConfigError("train.weight_decay", "must be >= 0");
  require_positive(t.batch_size, "train.batch_size");
  if (t.max_steps < 0) throw ConfigError("train.max_steps", "must be >= 0");
  require_positive(t.checkpoint_every, "train.checkpoint_every");
  require_positive(t.log_every, "train.log_every");
}

std::vector<std::string> validate_shapes(const ModelConfig& model) {
  std::vector<std::string> warnings;
  ModelConfig m = model;
  visit_model(m, [&](const char* key, int& value) {
    if (value < 1) warnings.push_back(std::string(key) + " must be >= 1 (got " + std::to_string(value) + ")");
  });
  if (!warnings.empty()) return warnings;

  auto check_even = [&](int value, const char* key) {
    if (value % 2 != 0)
      warnings.push_back(std::string(key) + "=" + std::to_string(value) +
                         " is odd; the predictor's stride-2 encoder halves this axis");
  };
  check_even(m.latent_frames, "latent_frames");
  check_even(m.latent_height, "latent_height");
  check_even(m.latent_width, "latent_width");
  check_even(m.timestep_embed_dim, "timestep_embed_dim");

  auto check_divides = [&](int heads, const char* key) {
    if (m.hidden_dim % heads != 0)
      warnings.push_back("hidden_dim=" + std::to_string(m.hidden_dim) + " is not divisible by " + key + "=" +
                         std::to_string(heads));
  };
  check_divides(m.predictor_heads, "predictor_heads");
  check_divides(m.gen_heads, "gen_heads");

  // Physics tokens tile a (F/2) x g x g grid over the pixel video.
  if (m.latent_frames % 2 == 0) {
    const int grid_t = m.latent_frames / 2;
    const int per_frame = m.phys_tokens / grid_t;
    int side = 0;
    while ((side + 1) * (side + 1) <= per_frame) ++side;
    if (m.phys_tokens % grid_t != 0 || side * side != per_frame) {
      warnings.push_back("phys_tokens=" + std::to_string(m.phys_tokens) + " does not factor as (latent_frames/2) x g x g");
    } else if (m.pixel_height() % side != 0 || m.pixel_width() % side != 0) {
      warnings.push_back("physics grid side " + std::to_string(side) + " does not divide the pixel frame size");
    }
  }
  return warnings;
}

Config parse_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("config parse error: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("", "config root must be an object");

  for (const auto& [key, value] : root.items()) {
    if (key != "preset" && key != "model" && key != "diffusion" && key != "train")
      throw ConfigError(key, "unknown key");
  }
  std::string base = "toy";
  if (root.contains("preset")) {
    if (!root["preset"].is_string()) throw ConfigError("preset", "expected a string");
    base = root["preset"].get<std::string>();
  }
  Config c = preset(base);

  std::vector<std::string> model_keys;
  visit_model(c.model, [&](const char* key, int&) { model_keys.emplace_back(key); });
  apply_section(root, "model", model_keys, [&](const std::string& key, const json& value) {
    visit_model(c.model, [&](const char* k, int& field) {
      if (key == k) read_value(value, "model." + key, field);
    });
  });

  apply_section(root, "diffusion", {"num_timesteps", "beta_start", "beta_end", "schedule_kind"},
                [&](const std::string& key, const json& value) {
                  if (key == "num_timesteps") read_value(value, "diffusion." + key, c.diffusion.num_timesteps);
                  if (key == "beta_start") read_value(value, "diffusion." + key, c.diffusion.beta_start);
                  if (key == "beta_end") read_value(value, "diffusion." + key, c.diffusion.beta_end);
                  if (key == "schedule_kind") {
                    if (!value.is_string() || value.get<std::string>() != "linear")
                      throw ConfigError("diffusion.schedule_kind", "only \"linear\" is supported");
                  }
                });

  std::vector<std::string> train_keys;
  visit_train(c.train, [&](const char* key, auto&) { train_keys.emplace_back(key); });
  apply_section(root, "train", train_keys, [&](const std::string& key, const json& value) {
    visit_train(c.train, [&](const char* k, auto& field) {
      if (key == k) read_value(value, "train." + key, field);
    });
  });

  validate(c);
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string to_json(const Config& config) {
  nlohmann::ordered_json root;
  Config c = config;
  visit_model(c.model, [&](const char* key, int& value) { root["model"][key] = value; });
  root["diffusion"]["num_timesteps"] = c.diffusion.num_timesteps;
  root["diffusion"]["beta_start"] = c.diffusion.beta_start;
  root["diffusion"]["beta_end"] = c.diffusion.beta_end;
  root["diffusion"]["schedule_kind"] = schedule_name(c.diffusion.schedule_kind);
  visit_train(c.train, [&](const char* key, auto& value) { root["train"][key] = value; });
  return root.dump(2);
}

void save_config(const Config& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config file " + path.string());
  out << to_json(config) << "\n";
}

std::uint64_t fingerprint(const ModelConfig& model) {
  // FNV-1a over the sorted-key JSON dump.
  const std::string canonical = model_json(model).dump();
  std::uint64_t hash = 1469598103934665603ULL;
  for (unsigned char ch : canonical) {
    hash ^= ch;
    hash *= 1099511628211ULL;
  }
  return hash;
}

std::string fingerprint_hex(const ModelConfig& model) {
  char buffer[17];
  std::snprintf(buffer, sizeof buffer, "%016llx", static_cast<unsigned long long>(fingerprint(model)));
  return buffer;
}

}  // namespace physvid
