// Regenerates src/physics_standardization.inc from the streaming pipeline's clips.
//   calibrate_physics [clips] > src/physics_standardization.inc

#include <cstdio>
#include <cstdlib>

#include "physvid/config.hpp"
#include "physvid/data.hpp"

int main(int argc, char** argv) {
  const int clips = argc > 1 ? std::atoi(argv[1]) : 256;
  const physvid::FeatureStandardization s =
      physvid::calibrate_physics_standardization(clips, physvid::preset("toy").model);
  std::printf("// Generated by tools/calibrate_physics over %d clips (toy preset); do not edit by hand.\n", clips);
  std::printf("s.mean = {");
  for (int i = 0; i < physvid::kPhysicsFeatureCount; ++i) std::printf("%s%.17g", i ? ", " : "", s.mean[i]);
  std::printf("};\ns.stddev = {");
  for (int i = 0; i < physvid::kPhysicsFeatureCount; ++i) std::printf("%s%.17g", i ? ", " : "", s.stddev[i]);
  std::printf("};\n");
  return 0;
}
