#include "testing.hpp"

#include <map>
#include <set>

#include "../fixtures.hpp"
#include "nodseg/error.hpp"
#include "nodseg/roi_pipeline.hpp"

using namespace nodseg;

TEST_SUITE("roi_pipeline") {
  TEST_CASE("window is centred on the nodule voxel and zero-padded outside the scan") {
    ScanVolume v;
    v.series_id = "s";
    v.shape = {5, 40, 50};
    v.spacing = {2.0, 1.0, 1.0};
    v.origin = {-4.0, 10.0, 20.0};
    v.voxels.resize(static_cast<std::size_t>(v.voxel_count()));
    for (std::size_t i = 0; i < v.voxels.size(); ++i) v.voxels[i] = 1.0f + static_cast<float>(i);
    const NoduleAnnotation ann{"s", {0.2, 30.4, 44.6}, 3.0};
    const auto stack = extract_roi(v, ann, 2.0, "s_n0");
    CHECK(stack.center_voxel == std::array<std::int64_t, 3>{2, 20, 25});
    // reach = floor(max(2, 1.5) / 2) = 1
    REQUIRE(stack.slices.size() == 3);
    CHECK(stack.slices[0].slice_index == -1);
    const auto& mid = stack.slices[1];
    CHECK(mid.image[64 * 128 + 64] == v.at(2, 20, 25));
    CHECK(mid.image[0] == 0.0f);
    CHECK(mid.image[(64 - 20) * 128 + (64 - 25)] == v.at(2, 0, 0));
    CHECK(mid.spacing_yx == std::array<double, 2>{1.0, 1.0});
  }

  TEST_CASE("slices beyond the scan are skipped and outside centres rejected") {
    const auto v = fixture::sphere_volume("s", {4, 20, 20}, {1.0, 1.0, 1.0}, {0, 0, 0}, {});
    const auto stack = extract_roi(v, {"s", {0.0, 10.0, 10.0}, 4.0}, 3.0, "a");
    CHECK(stack.geometry.slice_offsets == std::vector<int>{0, 1, 2, 3});
    CHECK_THROWS_AS(extract_roi(v, {"s", {10.0, 10.0, 10.0}, 4.0}, 3.0, "b"), PlacementError);
    CHECK_THROWS_AS(extract_roi(v, {"t", {1.0, 10.0, 10.0}, 4.0}, 3.0, "c"), ParameterError);
  }

  TEST_CASE("intensity window clamps to the unit interval") {
    const std::vector<float> in{-1000.0f, 0.0f, 50.0f, 100.0f, 400.0f};
    const auto out = normalize_intensity(in, 0.0, 100.0);
    CHECK(out == std::vector<float>{0.0f, 0.0f, 0.5f, 1.0f, 1.0f});
    CHECK_THROWS_AS(normalize_intensity(in, 5.0, 5.0), ParameterError);
  }

  TEST_CASE("sphere masks match the drawn spheres and labels follow masks") {
    const fixture::Sphere s{{6.0, 20.0, 19.0}, 9.0};
    const auto v = fixture::sphere_volume("s", {12, 80, 80}, {1.5, 0.5, 0.5}, {0, 0, 0}, {s});
    const auto ann = fixture::annotation("s", s);
    auto stack = extract_roi(v, ann, 5.0, "s_n0");
    prepare_stack(stack, ann, {0.0, 255.0});
    int nodule_slices = 0;
    for (const auto& p : stack.slices) {
      CHECK(validate_patch(p).empty());
      for (std::size_t i = 0; i < p.pixel_count(); ++i) CHECK((p.image[i] > 0.5f) == (p.mask[i] == 1));
      nodule_slices += p.class_label;
    }
    // |dz| <= 4.5 mm at 1.5 mm spacing: offsets -3..3
    CHECK(nodule_slices == 7);
  }

  TEST_CASE("slice selection keeps nearest empty slices and partitions lesions into folds") {
    std::vector<ROIStack> stacks;
    for (int l = 0; l < 7; ++l) {
      const std::string series = "v" + std::to_string(l);
      const fixture::Sphere s{{10.0, 40.0, 40.0}, 4.0};
      const auto v = fixture::sphere_volume(series, {21, 80, 80}, {1.0, 1.0, 1.0}, {0, 0, 0}, {s});
      auto stack = extract_roi(v, fixture::annotation(series, s), 10.0, series + "_n0");
      prepare_stack(stack, fixture::annotation(series, s), {0.0, 255.0});
      stacks.push_back(std::move(stack));
    }
    const auto patches = build_slice_dataset(stacks, 1.0, 5, 42);
    std::map<std::string, std::vector<int>> slices;
    std::map<std::string, int> fold;
    std::set<int> used;
    for (const auto& p : patches) {
      slices[p.lesion_id].push_back(p.slice_index);
      if (fold.count(p.lesion_id)) CHECK(fold[p.lesion_id] == *p.fold);
      fold[p.lesion_id] = *p.fold;
      used.insert(*p.fold);
    }
    // Nodule spans offsets -2..2; five nearest empty slices are -3, 3, -4, 4, -5.
    CHECK(slices["v0_n0"] == std::vector<int>{-5, -4, -3, -2, -1, 0, 1, 2, 3, 4});
    CHECK(used == std::set<int>{0, 1, 2, 3, 4});
    CHECK(build_slice_dataset(stacks, 1.0, 5, 42).front().fold == patches.front().fold);

    const auto none = build_slice_dataset(stacks, 0.0, 5, 42);
    for (const auto& p : none) CHECK(p.class_label == 1);
    CHECK_THROWS_AS(build_slice_dataset(stacks, 1.0, 1, 42), ConfigError);
    CHECK_THROWS_AS(build_slice_dataset(std::span(stacks).first(3), 1.0, 5, 42), ConfigError);
  }

  TEST_CASE("flips move image and mask together and are involutions") {
    auto p = fixture::random_patches(1, 9, 64)[0];
    const auto original = p;
    flip_horizontal(p);
    CHECK(p.image[5] == original.image[63 - 5]);
    CHECK(p.mask[64 + 2] == original.mask[64 + 61]);
    flip_horizontal(p);
    flip_vertical(p);
    CHECK(p.image[5] == original.image[63 * 64 + 5]);
    flip_vertical(p);
    CHECK(p.image == original.image);

    std::mt19937_64 a(1), b(1);
    CHECK(augment_flip(original, a).image == augment_flip(original, b).image);
  }
}
