#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "ssk/hash.hpp"
#include "ssk/landmarks.hpp"
#include "ssk/synth.hpp"

using namespace ssk;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliRun {
  int status = -1;
  std::string out;
};

CliRun run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + SSK_CLI + " " + args + " 2>/dev/null";
  CliRun r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, p)) > 0;) r.out.append(buf, n);
  const int st = pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ssk_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Frozen digest of the default-pose face rasterized at 64x64.
const std::string kFaceFixtureSha1 = "87cd29a9558056746d93a9e626209950c521b9f2";

const std::string kSmallSynth =
    "--width 32 --height 32 --frames_per_clip 5 --train_clips 2 --val_clips 1 --test_clips 1 "
    "--train_subjects 1 --val_subjects 1 --test_subjects 1";

}  // namespace

TEST(CliTest, SynthDigestIsStable) {
  const fs::path dir = temp_dir("synth");
  const CliRun a = run_cli("synth --seed 7 " + kSmallSynth + " --out " + (dir / "a").string());
  const CliRun b = run_cli("synth --seed 7 " + kSmallSynth + " --out " + (dir / "b").string());
  ASSERT_EQ(a.status, 0) << a.out;
  ASSERT_EQ(b.status, 0) << b.out;
  const json ja = json::parse(a.out), jb = json::parse(b.out);
  EXPECT_EQ(ja.at("digest"), jb.at("digest"));
  EXPECT_EQ(ja.at("clips"), 4);
  EXPECT_EQ(ja.at("frames"), 20);
  EXPECT_TRUE(fs::exists(dir / "a" / "manifest.json"));

  // The environment seed overrides the flag.
  const CliRun c = run_cli("synth --seed 7 " + kSmallSynth + " --out " + (dir / "c").string(), "SSK_SEED=8");
  ASSERT_EQ(c.status, 0) << c.out;
  const json jc = json::parse(c.out);
  EXPECT_EQ(jc.at("seed"), 8);
  EXPECT_NE(jc.at("digest"), ja.at("digest"));
}

TEST(CliTest, ErrorsAreJson) {
  const CliRun bad_value = run_cli("train --dry-run --optim.base_lr -1");
  EXPECT_NE(bad_value.status, 0);
  const json j = json::parse(bad_value.out);
  ASSERT_TRUE(j.contains("error"));
  EXPECT_EQ(j["error"].at("command"), "train");
  EXPECT_FALSE(j["error"].at("message").get<std::string>().empty());

  const CliRun unknown = run_cli("train --dry-run --set model.colour=blue");
  EXPECT_NE(unknown.status, 0);
  EXPECT_TRUE(json::parse(unknown.out).contains("error"));

  const CliRun usage = run_cli("stats --no-such-flag");
  EXPECT_NE(usage.status, 0);
  EXPECT_EQ(json::parse(usage.out)["error"].at("type"), "usage");

  const CliRun bad_seed = run_cli("train --dry-run", "SSK_SEED=abc");
  EXPECT_NE(bad_seed.status, 0);
  EXPECT_TRUE(json::parse(bad_seed.out).contains("error"));
}

TEST(CliTest, DryRunAppliesFlags) {
  const CliRun r = run_cli("train --dry-run --optim.base_lr 0.5 --model.widths 2,4,8,8 --set loss.kind=iou", "SSK_SEED=99");
  ASSERT_EQ(r.status, 0) << r.out;
  const json cfg = json::parse(r.out).at("config");
  EXPECT_DOUBLE_EQ(cfg["optim"]["base_lr"].get<double>(), 0.5);
  EXPECT_EQ(cfg["model"]["widths"], json::array({2, 4, 8, 8}));
  EXPECT_EQ(cfg["loss"]["kind"], "iou");
  EXPECT_EQ(cfg["seed"], 99);
}

TEST(CliTest, ConvertLandmarksFixture) {
  const fs::path dir = temp_dir("convert");
  const LandmarkFrame lm = face_landmarks(FaceShape{}, FacePose{});
  write_pts(dir / "face.pts", lm);
  const CliRun r = run_cli("convert-landmarks --pts " + (dir / "face.pts").string() +
                        " --width 64 --height 64 --out " + (dir / "masks").string());
  ASSERT_EQ(r.status, 0) << r.out;
  const json row = json::parse(r.out).at("masks").at(0);
  const MaskFrame m = landmarks_to_mask(lm, 64, 64, 8);
  const std::string digest =
      git_blob_sha1(std::string_view(reinterpret_cast<const char*>(m.labels.data()), m.labels.size()));
  EXPECT_EQ(row.at("sha1"), digest);
  EXPECT_EQ(row.at("sha1"), kFaceFixtureSha1);
  EXPECT_TRUE(fs::exists(dir / "masks" / "face.png"));
  EXPECT_EQ(row["pixels"]["eyes"].get<std::size_t>(), m.count(kEyes));
}

TEST(CliTest, StatsAndGradcheck) {
  // Paired sleep-drug data; the two-sided paired t-test gives p = 0.0028329.
  const CliRun s = run_cli(
      "stats --a 1.9,0.8,1.1,0.1,-0.1,4.4,5.5,1.6,4.6,3.4 --b 0.7,-1.6,-0.2,-1.2,-0.1,3.4,3.7,0.8,0.0,2.0");
  ASSERT_EQ(s.status, 0) << s.out;
  const json js = json::parse(s.out);
  EXPECT_NEAR(js.at("p_value").get<double>(), 0.00283289019738427, 1e-9);
  EXPECT_EQ(js.at("n"), 10);
  const CliRun same = run_cli("stats --a 1,2,3 --b 1,2,3 --tail greater");
  ASSERT_EQ(same.status, 0) << same.out;
  EXPECT_DOUBLE_EQ(json::parse(same.out).at("p_value").get<double>(), 1.0);

  const CliRun g = run_cli("gradcheck");
  ASSERT_EQ(g.status, 0) << g.out;
}
