#include "testing.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "../fixtures.hpp"
#include "nodseg/error.hpp"
#include "nodseg/imaging_io.hpp"
#include "tmpdir.hpp"

using namespace nodseg;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

}  // namespace

TEST_SUITE("imaging_io") {
  TEST_CASE("metaimage round trip keeps geometry and voxels") {
    TempDir dir("mhd_roundtrip");
    const auto vol = fixture::sphere_volume("scan", {3, 5, 7}, {2.5, 0.7, 0.6}, {-10.0, 4.0, 7.5},
                                            {{{-7.5, 5.4, 9.0}, 3.0}}, 1.0);
    write_metaimage(vol, dir / "scan.mhd");
    const auto back = read_metaimage(dir / "scan.mhd");
    CHECK(back.shape == vol.shape);
    CHECK(back.spacing == vol.spacing);
    CHECK(back.origin == vol.origin);
    CHECK(back.voxels == vol.voxels);
    CHECK(back.series_id == "scan");
  }

  TEST_CASE("header axes are reversed into Z,Y,X and big-endian shorts decode") {
    TempDir dir("mhd_msb");
    write_text(dir / "v.mhd",
               "ObjectType = Image\nNDims = 3\nDimSize = 3 2 1\nElementSpacing = 0.5 0.6 2.0\n"
               "Offset = 1 2 3\nElementType = MET_SHORT\nBinaryDataByteOrderMSB = True\nElementDataFile = v.raw\n");
    // Values 0..5 then -1 as big-endian int16, stored X fastest.
    write_bytes(dir / "v.raw", {0, 0, 0, 1, 0, 2, 0, 3, 0, 4, 0xff, 0xff});
    const auto v = read_metaimage(dir / "v.mhd");
    CHECK(v.shape == std::array<std::int64_t, 3>{1, 2, 3});
    CHECK(v.spacing == Vec3{2.0, 0.6, 0.5});
    CHECK(v.origin == Vec3{3.0, 2.0, 1.0});
    CHECK(v.at(0, 0, 1) == 1.0f);
    CHECK(v.at(0, 1, 0) == 3.0f);
    CHECK(v.at(0, 1, 2) == -1.0f);
  }

  TEST_CASE("malformed metaimages are rejected with typed errors") {
    TempDir dir("mhd_bad");
    const std::string base = "NDims = 3\nDimSize = 2 2 2\nElementSpacing = 1 1 1\nElementType = MET_UCHAR\n";
    write_bytes(dir / "v.raw", std::vector<unsigned char>(7, 1));
    write_text(dir / "short.mhd", base + "ElementDataFile = v.raw\n");
    CHECK_THROWS_AS(read_metaimage(dir / "short.mhd"), TruncationError);

    write_bytes(dir / "w.raw", std::vector<unsigned char>(8, 1));
    write_text(dir / "zip.mhd", base + "CompressedData = True\nElementDataFile = w.raw\n");
    CHECK_THROWS_AS(read_metaimage(dir / "zip.mhd"), FormatError);

    write_text(dir / "nospacing.mhd", "DimSize = 2 2 2\nElementType = MET_UCHAR\nElementDataFile = w.raw\n");
    CHECK_THROWS_AS(read_metaimage(dir / "nospacing.mhd"), FormatError);

    write_text(dir / "local.mhd", base + "ElementDataFile = LOCAL\n");
    CHECK_THROWS_AS(read_metaimage(dir / "local.mhd"), FormatError);

    CHECK_THROWS_AS(read_metaimage(dir / "absent.mhd"), IoError);
  }

  TEST_CASE("annotation columns are matched by name and bad rows are counted") {
    TempDir dir("csv");
    write_text(dir / "a.csv",
               "coordX,diameter_mm,seriesuid,coordZ,coordY\n"
               "1.5,6.0,s1,-3.0,2.0\n"
               "oops,6.0,s1,1,1\n"
               "1,0,s2,1,1\n"
               "4,12.5,s2,5,6\n");
    const auto t = read_annotations(dir / "a.csv");
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rejected == 2);
    CHECK(t.rows[0].series_id == "s1");
    CHECK(t.rows[0].center_world == Vec3{-3.0, 2.0, 1.5});
    CHECK(t.rows[1].diameter == 12.5);
  }

  TEST_CASE("patch dataset round trip and manifest") {
    TempDir dir("patches");
    auto patches = fixture::random_patches(4, 3);
    patches[3].fold.reset();
    const auto manifest = write_patch_dataset(patches, dir.path);
    const auto loaded = load_patch_dataset(dir.path);
    CHECK(loaded.manifest == manifest);
    REQUIRE(loaded.patches.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(loaded.patches[i].image == patches[i].image);
      CHECK(loaded.patches[i].mask == patches[i].mask);
      CHECK(loaded.patches[i].fold == patches[i].fold);
      CHECK(loaded.patches[i].lesion_id == patches[i].lesion_id);
    }
    const auto doc = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
    CHECK(doc["entries"][3]["fold"].is_null());
    CHECK(std::filesystem::exists(dir / (patch_stem(patches[0]) + ".img")));
  }

  TEST_CASE("writing rejects invalid or colliding patches") {
    TempDir dir("patches_bad");
    auto patches = fixture::random_patches(2, 4);
    patches[1].lesion_id = patches[0].lesion_id;
    patches[1].slice_index = patches[0].slice_index;
    CHECK_THROWS_AS(write_patch_dataset(patches, dir.path), ParameterError);

    auto small = fixture::random_patches(1, 4, 64);
    CHECK_THROWS_AS(write_patch_dataset(small, dir.path), ParameterError);

    auto mislabeled = fixture::random_patches(1, 4);
    mislabeled[0].class_label = 1 - mislabeled[0].class_label;
    CHECK_THROWS_AS(write_patch_dataset(mislabeled, dir.path), ParameterError);
  }

  TEST_CASE("loading detects corrupted entries") {
    TempDir dir("patches_corrupt");
    const auto patches = fixture::random_patches(3, 5);
    write_patch_dataset(patches, dir.path);
    const auto stem = patch_stem(patches[1]);

    SUBCASE("missing image") {
      std::filesystem::remove(dir / (stem + ".img"));
      CHECK_THROWS_AS(load_patch_dataset(dir.path), IntegrityError);
    }
    SUBCASE("short mask") {
      std::filesystem::resize_file(dir / (stem + ".msk"), 100);
      CHECK_THROWS_AS(load_patch_dataset(dir.path), IntegrityError);
    }
    SUBCASE("mask value outside {0,1}") {
      auto m = read_mask_raw(dir / (stem + ".msk"), patches[1].pixel_count());
      m[0] = 7;
      write_mask_raw(dir / (stem + ".msk"), m);
      CHECK_THROWS_AS(load_patch_dataset(dir.path), IntegrityError);
    }
    SUBCASE("label disagrees with mask") {
      auto doc = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
      doc["entries"][1]["class_label"] = 1 - doc["entries"][1]["class_label"].get<int>();
      std::ofstream(dir / "manifest.json") << doc.dump();
      try {
        load_patch_dataset(dir.path);
        FAIL("expected IntegrityError");
      } catch (const IntegrityError& e) {
        CHECK(std::string(e.what()).find(stem) != std::string::npos);
      }
    }
  }
}
