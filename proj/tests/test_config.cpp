#include "doctest.h"

#include "tribench/config.hpp"
#include "tribench/manifest.hpp"

#include <filesystem>
#include <fstream>

using namespace tribench;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tribench_config_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

std::string error_of(const std::string& text) {
  try {
    parse_config(text, "t.cfg");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("defaults carry the published hyperparameters") {
  const WorkbenchConfig c;
  CHECK(c.dataset.count_source == 500);
  CHECK(c.dataset.count_target == 150);
  CHECK(c.cut.epochs == 40);
  CHECK(c.cut.taps == 5);
  CHECK(c.cut.patches == 32);
  CHECK(c.cut.embed_dim == 32);
  CHECK(c.train.batch_size == 64);
  CHECK(c.train.lr == 3e-4);
  CHECK(c.train.entropy_coef == 0.0);
  CHECK(c.train.epochs == 128);
  CHECK(c.selection.top_n == 5);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("dump and parse round trip exactly") {
  WorkbenchConfig c;
  c.seed = 1234567890123ULL;
  c.scale = 0.1;
  c.env.sim.grid_nx = 9;
  c.env.sim.damping = 0.1 + 0.2;  // not representable in short decimal form
  c.env.camera.width = 64;
  c.env.reward.bounds.second_band.reset();
  c.embed.policy = LocationPolicy::PerEpisode;
  c.experiment.variants = {Variant::Embedded, Variant::Original};
  const std::string text = dump_config(c);
  const WorkbenchConfig back = parse_config(text);
  CHECK(dump_config(back) == text);
  CHECK(back.seed == c.seed);
  CHECK(back.env.sim.damping == c.env.sim.damping);
  CHECK_FALSE(back.env.reward.bounds.second_band.has_value());
  CHECK(back.experiment.variants.size() == 2);
  CHECK(back.experiment.variants[0] == Variant::Embedded);
}

TEST_CASE("comments, blank lines and partial files") {
  const auto c = parse_config("# top\n\n[train]\nepochs = 7   # trailing\n[run]\nseed=5\n");
  CHECK(c.train.epochs == 7);
  CHECK(c.seed == 5);
  CHECK(c.train.batch_size == 64);
}

TEST_CASE("unknown keys and sections are rejected with their line") {
  CHECK(error_of("[train]\nepochs = 3\nepoch = 4\n").find("t.cfg:3") != std::string::npos);
  CHECK(error_of("[training]\n").find("t.cfg:1") != std::string::npos);
  CHECK(error_of("epochs = 3\n").find("t.cfg:1") != std::string::npos);
  CHECK(error_of("[train]\nepochs = three\n").find("t.cfg:2") != std::string::npos);
  CHECK(error_of("[train]\nepochs\n").find("t.cfg:2") != std::string::npos);
  CHECK(error_of("[experiment]\nvariants = original, fancy\n").find("fancy") != std::string::npos);
}

TEST_CASE("validation rejects inconsistent values and missing paths") {
  CHECK_THROWS_AS(parse_config("[train]\nbatch_size = 0\n").validate(), ConfigError);
  CHECK_THROWS_AS(parse_config("[embed]\nk = 16\n").validate(), ConfigError);
  CHECK_THROWS_AS(parse_config("[camera]\nwidth = 60\n").validate(), ConfigError);
  const std::string missing = "[experiment]\ntranslator_checkpoint = /definitely/not/here.bin\n";
  try {
    parse_config(missing).validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("/definitely/not/here.bin") != std::string::npos);
  }
}

TEST_CASE("load_config names a missing file") {
  CHECK_THROWS_AS(load_config("/no/such/file.cfg"), IoError);
  const fs::path d = scratch("load");
  write(d / "a.cfg", "[run]\nseed = 9\n");
  CHECK(load_config(d / "a.cfg").seed == 9);
}

TEST_CASE("shipped configs parse and validate") {
  for (const char* name : {"protocol.cfg", "desk.cfg"}) {
    const fs::path p = fs::path(TRIBENCH_SOURCE_DIR) / "configs" / name;
    CAPTURE(p);
    WorkbenchConfig c;
    REQUIRE_NOTHROW(c = load_config(p));
    CHECK_NOTHROW(c.validate());
  }
  const auto desk = load_config(fs::path(TRIBENCH_SOURCE_DIR) / "configs" / "desk.cfg");
  CHECK(desk.env.camera.width == 64);
  CHECK(desk.dataset.count_source == 200);
  CHECK(desk.dataset.count_target == 100);
  CHECK(desk.cut.epochs == 40);
  CHECK(desk.scale == 0.1);
}

TEST_CASE("sha1 and git blob hashes") {
  CHECK(sha1_hex("") == "da39a3ee5e6b4b0d3255bfef95601890afd80709");
  CHECK(sha1_hex("abc") == "a9993e364706816aba3e25717850c26c9cd0d89d");
  const fs::path d = scratch("blob");
  write(d / "hello.txt", "hello\n");
  CHECK(git_blob_sha1(d / "hello.txt") == "ce013625030ba8dba906f756967f9e9ca394464a");
  write(d / "empty", "");
  CHECK(git_blob_sha1(d / "empty") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("manifest is written before and finalized after") {
  const fs::path d = scratch("manifest");
  const std::string cfg_text = dump_config(WorkbenchConfig{});
  RunManifest m(d / "manifest_x.json", "x", {"tribench", "x"}, 42, 0.5, cfg_text, false);
  m.write_initial();
  auto j = read_manifest(d / "manifest_x.json");
  CHECK(j["status"] == "running");
  CHECK(j["master_seed"] == 42);
  CHECK(j["config_sha1"] == sha1_hex(cfg_text));
  CHECK(j["config"] == cfg_text);
  CHECK(j.contains("started"));

  fs::create_directories(d / "sub");
  write(d / "sub" / "hello.txt", "hello\n");
  m.finalize({d}, "complete");
  j = read_manifest(d / "manifest_x.json");
  CHECK(j["status"] == "complete");
  CHECK(j.contains("finished"));
  REQUIRE(j["artifacts"].size() == 1);
  CHECK(j["artifacts"][0]["path"] == "sub/hello.txt");
  CHECK(j["artifacts"][0]["bytes"] == 6);
  CHECK(j["artifacts"][0]["git_sha1"] == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK_FALSE(fs::exists(d / "manifest_x.json.tmp"));

  // The snapshot alone reproduces the configuration.
  CHECK(dump_config(parse_config(j["config"].get<std::string>())) == cfg_text);
}
