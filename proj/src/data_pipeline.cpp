#include <cstdio>
#include <stdexcept>

#include "physvid/data.hpp"

namespace physvid {
namespace {

template <typename Seq>
void round_to_float(Seq& values) {
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

std::string sample_id_for(std::int64_t seed, ClipKind kind) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "clip-%08lld-%s", static_cast<long long>(seed), to_string(kind).c_str());
  return buf;
}

}  // namespace

TrainingSample make_sample(std::int64_t seed, const ModelConfig& model) {
  const ClipKind kind = kind_for_seed(seed);
  TrainingSample sample;
  sample.sample_id = sample_id_for(seed, kind);
  try {
    const VideoClip clip = synth_clip(seed, kind, ClipGeometry::from(model));
    sample.prompt = clip.prompt;
    sample.z0 = toy_vae_encode(clip.frames, model);
    sample.c_text = toy_text_embed(clip.prompt, model);
    sample.p_gt = toy_physics_extract(clip.frames, model);
  } catch (const std::exception& e) {
    throw std::runtime_error(sample.sample_id + ": " + e.what());
  }
  round_to_float(sample.z0.data);
  round_to_float(sample.c_text.data);
  round_to_float(sample.p_gt.data);
  return sample;
}

SeedSource seed_range(std::int64_t begin, std::int64_t end) {
  return [next = begin, end]() mutable -> std::optional<std::int64_t> {
    if (next >= end) return std::nullopt;
    return next++;
  };
}

SeedSource seed_list(std::vector<std::int64_t> seeds) {
  return [seeds = std::move(seeds), i = std::size_t{0}]() mutable -> std::optional<std::int64_t> {
    if (i >= seeds.size()) return std::nullopt;
    return seeds[i++];
  };
}

std::optional<TrainingSample> SampleStream::next() {
  const std::optional<std::int64_t> seed = seeds_();
  if (!seed) return std::nullopt;
  return make_sample(*seed, model_);
}

}  // namespace physvid
