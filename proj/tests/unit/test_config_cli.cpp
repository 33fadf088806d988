#include "testing.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "../fixtures.hpp"
#include "nodseg/cli.hpp"
#include "nodseg/config.hpp"
#include "nodseg/error.hpp"
#include "nodseg/imaging_io.hpp"
#include "nodseg/metrics.hpp"
#include "tmpdir.hpp"

using namespace nodseg;
using json = nlohmann::json;

namespace {

std::string config_error(const json& doc, std::optional<Phase> phase = {}) {
  try {
    parse_run_config(doc, phase);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("empty document yields phase defaults") {
    const auto fine = parse_run_config(json::object(), Phase::Finetune);
    CHECK(fine.train.epochs == 50);
    CHECK(fine.train.std_enabled);
    const auto pre = parse_run_config(json{{"train", {{"phase", "pretrain"}}}});
    CHECK(pre.train.epochs == 200);
    CHECK(pre.holdout_fold() == 4);
  }

  TEST_CASE("errors start with the offending key path") {
    CHECK(config_error(json{{"bogus", 1}}).rfind("bogus", 0) == 0);
    CHECK(config_error(json{{"train", {{"lr", 0.1}}}}).rfind("train.lr", 0) == 0);
    CHECK(config_error(json{{"model", {{"std", {{"sigma", 2.0}}}}}}).rfind("model.std.sigma", 0) == 0);
    CHECK(config_error(json{{"train", {{"epochs", "ten"}}}}).rfind("train.epochs", 0) == 0);
    CHECK(config_error(json{{"train", {{"phase", "pretrain"}}}}, Phase::Finetune).rfind("train.phase", 0) == 0);
    CHECK(config_error(json{{"eval", {{"aggregation", "voxel"}}}}).rfind("eval.aggregation", 0) == 0);
    CHECK(config_error(json{{"model", {{"combinations", {{{"cls_stage", "C2"}, {"seg_block", "S4"}}}}}}})
              .rfind("model.combinations", 0) == 0);
  }

  TEST_CASE("resolved config parses back to the same values") {
    const json doc{{"model", {{"seg_widths", {8, 16, 32, 32, 32}}, {"std", {{"lambda2_0", 0.0}}}}},
                   {"train", {{"batch_size", 3}, {"loss_weights", {{"w_cls", 0.5}}}}},
                   {"freeze", {"S1", "C1"}},
                   {"eval", {{"aggregation", "slice"}}}};
    const auto cfg = parse_run_config(doc, Phase::Finetune);
    const auto again = parse_run_config(to_json(cfg), Phase::Finetune);
    CHECK(to_json(again) == to_json(cfg));
    CHECK(again.model.std.lambda2 == 0.0);
    CHECK(again.freeze.frozen_groups == std::vector<std::string>{"S1", "C1"});
    CHECK(again.eval.aggregation == Aggregation::Slice);
  }
}

TEST_SUITE("cli") {
  TEST_CASE("split selection") {
    auto patches = fixture::random_patches(10, 1, 32);
    patches[9].fold.reset();
    // Fold 4 keeps one patch; the unassigned one joins training.
    CHECK(select_split(patches, "test", 4).size() == 1);
    CHECK(select_split(patches, "val", 4).size() == 1);
    CHECK(select_split(patches, "train", 4).size() == 9);
    CHECK(select_split(patches, "fold1", 4).size() == 2);
    CHECK(select_split(patches, "all", 4).size() == 10);
    CHECK_THROWS_AS(select_split(patches, "fold", 4), ConfigError);
    CHECK_THROWS_AS(select_split(patches, "fold7", 4), ConfigError);
  }

  TEST_CASE("exit codes") {
    TempDir dir("cli_codes");
    write_patch_dataset(fixture::random_patches(3, 1), dir / "patches");
    std::ofstream(dir / "bad.json") << R"({"train": {"epochz": 3}})";
    std::ofstream(dir / "ok.json") << R"({"data": {"patch_dir": ")" << (dir / "patches").string() << R"("}})";
    std::ofstream(dir / "gone.json") << R"({"data": {"patch_dir": ")" << (dir / "nothing").string() << R"("}})";
    CHECK(run_cli({"finetune", "--config", (dir / "bad.json").string()}) == kExitConfig);
    CHECK(run_cli({"finetune", "--config", (dir / "absent.json").string()}) == kExitConfig);
    CHECK(run_cli({"finetune"}) == kExitConfig);
    CHECK(run_cli({"unknown"}) == kExitConfig);
    CHECK(run_cli({"evaluate", "--config", (dir / "ok.json").string(), "--split", "nope"}) == kExitConfig);
    CHECK(run_cli({"evaluate", "--config", (dir / "ok.json").string(), "--split", "all"}) == kExitConfig);
    CHECK(run_cli({"finetune", "--config", (dir / "gone.json").string(), "--out", (dir / "o").string()}) ==
          kExitRuntime);
  }

  TEST_CASE("report merges metrics files") {
    TempDir dir("cli_report");
    const auto report = aggregate_report({case_metrics(BinaryMask(8, 8, std::vector<std::uint8_t>(64, 1)),
                                                       BinaryMask(8, 8, std::vector<std::uint8_t>(64, 1)),
                                                       {1.0, 1.0}, "L")});
    std::filesystem::create_directories(dir / "runA");
    write_metrics_json(report, dir / "runA" / "metrics.json");
    write_metrics_json(report, dir / "b.json");
    CHECK(run_cli({"report", (dir / "runA" / "metrics.json").string(), (dir / "b.json").string(), "--out",
                   (dir / "table").string()}) == kExitOk);
    std::ifstream md(dir / "table" / "report.md");
    std::string all((std::istreambuf_iterator<char>(md)), {});
    CHECK(all.find("| runA | 1.000 | 1.000 | 1.000 | 1.000 | 0.000 | 0.000 |") != std::string::npos);
    CHECK(all.find("| b |") != std::string::npos);
    CHECK(run_cli({"report", (dir / "missing.json").string()}) == kExitRuntime);
  }

  TEST_CASE("evaluate scores external predictions") {
    TempDir dir("cli_eval");
    auto patches = fixture::random_patches(5, 2);
    write_patch_dataset(patches, dir / "patches");
    std::filesystem::create_directories(dir / "pred");
    for (const auto& p : patches) write_mask_raw(dir / "pred" / (patch_stem(p) + ".msk"), p.mask);
    const json cfg{{"data", {{"patch_dir", (dir / "patches").string()}}}, {"eval", {{"aggregation", "slice"}}}};
    std::ofstream(dir / "c.json") << cfg.dump();
    CHECK(run_cli({"evaluate", "--config", (dir / "c.json").string(), "--predictions", (dir / "pred").string(),
                   "--split", "all", "--out", (dir / "eval").string()}) == kExitOk);
    const auto r = read_metrics_json(dir / "eval" / "metrics.json");
    CHECK(r.fp == 0);
    CHECK(r.fn == 0);
    CHECK(*r.dice == 1.0);
    CHECK(std::filesystem::exists(dir / "eval" / "resolved_config.json"));
  }
}
