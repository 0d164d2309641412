#include "doctest.h"
#include "rpr/io.hpp"
#include "rpr/synth.hpp"
#include "rpr/training.hpp"

#include <random>

using namespace rpr;

namespace {

SynthConfig small() {
  SynthConfig c;
  c.n_places = 5;
  c.variants_per_place = 3;
  c.train_variants = 2;
  c.points_per_cloud = 256;
  return c;
}

}  // namespace

TEST_CASE("counts, splits and normalization") {
  const auto d = synth_generate(small());
  CHECK(d.train.size() == 10);
  CHECK(d.test.size() == 5);
  for (const auto& s : d.train) CHECK(s.variant < 2);
  for (const auto& s : d.test) CHECK(s.variant == 2);
  for (const auto* split : {&d.train, &d.test})
    for (const auto& s : *split) {
      CHECK(s.cloud.rows() == 256);
      CHECK(s.cloud.colwise().mean().cwiseAbs().maxCoeff() <= 1e-9);
      CHECK(s.cloud.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
    }
}

TEST_CASE("positions follow the triplet radii") {
  SynthConfig c = small();
  c.n_places = 9;
  const auto d = synth_generate(c);
  const TripletConfig t;
  std::vector<SynthSample> all = d.train;
  all.insert(all.end(), d.test.begin(), d.test.end());
  for (const auto& a : all)
    for (const auto& b : all) {
      const double geo = (a.position - b.position).norm();
      if (a.place == b.place) CHECK(geo == 0.0);
      else CHECK(geo > t.neg_radius);
    }
  SynthConfig two = small();
  two.n_places = 2;
  two.variants_per_place = 1;
  two.train_variants = 1;
  const auto d2 = synth_generate(two);
  REQUIRE(d2.train.size() == 2);
  CHECK((d2.train[0].position - d2.train[1].position).norm() >= 100.0);
}

TEST_CASE("deterministic per structure seed") {
  const auto a = synth_generate(small());
  const auto b = synth_generate(small());
  for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].cloud == b.train[i].cloud);
  SynthConfig other = small();
  other.structure_seed = 1;
  CHECK(synth_generate(other).train[0].cloud != a.train[0].cloud);
  // Variants of a place differ from each other.
  CHECK(a.train[0].cloud != a.train[1].cloud);
}

TEST_CASE("layouts") {
  const SynthConfig c = small();
  for (Index p = 0; p < c.n_places; ++p) {
    const auto layout = synth_place_layout(c, p);
    CHECK(layout.size() >= 5);
    CHECK(layout.size() <= 15);
    for (const auto& prim : layout) CHECK(prim.area() > 0.0);
  }
}

TEST_CASE("invalid configs") {
  SynthConfig c = small();
  c.n_places = 1;
  CHECK_THROWS_AS(synth_generate(c), InvalidArgument);
  c = small();
  c.train_variants = 4;
  CHECK_THROWS_AS(synth_generate(c), InvalidArgument);
  c = small();
  c.occlusion_max = 1.0;
  CHECK_THROWS_AS(synth_generate(c), InvalidArgument);
}

TEST_CASE("dataset on disk") {
  const auto dir = std::filesystem::temp_directory_path() / ("rpr_synth_" + std::to_string(std::random_device{}()));
  const auto d = synth_generate(small());
  write_synth_dataset(dir, d);
  const auto train = read_manifest(dir / "train.csv");
  const auto test = read_manifest(dir / "test.csv");
  CHECK(train.split == "train");
  CHECK(train.entries.size() == 10);
  CHECK(test.entries.size() == 5);
  CHECK(read_bin_cloud(train.resolve(train.entries[3])) == d.train[3].cloud);
  CHECK(test.entries[4].northing == d.test[4].position.x());
  std::filesystem::remove_all(dir);
}
