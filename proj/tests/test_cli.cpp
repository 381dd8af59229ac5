// End-to-end tests that drive the installed command-line binary through real
// files and pipes: synth -> encode -> decode -> losscheck -> eval -> report,
// plus the error paths the tool promises (no partial output, frame mismatch
// listings, config precedence, worker-count independence).

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const char* kCli = MONO3D_CLI_PATH;

fs::path work_root() {
  static fs::path root = [] {
    fs::path p = fs::temp_directory_path() /
                 ("mono3d_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
  }();
  return root;
}

fs::path test_dir(const std::string& name) {
  fs::path p = work_root() / name;
  fs::create_directories(p);
  return p;
}

std::string read_all(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_all(const fs::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary);
  f << content;
}

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(const std::string& args, const std::string& env_prefix = "") {
  static int counter = 0;
  fs::path out = work_root() / ("stdout_" + std::to_string(counter) + ".txt");
  fs::path err = work_root() / ("stderr_" + std::to_string(counter) + ".txt");
  ++counter;
  std::string cmd = env_prefix + std::string(kCli) + " " + args + " >" + out.string() +
                    " 2>" + err.string();
  int rc = std::system(cmd.c_str());
  RunResult r;
  r.code = rc < 0 ? -1 : WEXITSTATUS(rc);
  r.out = read_all(out);
  r.err = read_all(err);
  return r;
}

int count_files(const fs::path& dir, const std::string& ext) {
  if (!fs::exists(dir)) return 0;
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ext) ++n;
  return n;
}

// Generates a small dataset: labels/, calib/, and optionally target tables,
// perturbed tables, and decoded detections.
std::string synth_args(const fs::path& dir, int frames, int objects, int seed,
                       const std::string& extra = "") {
  return "synth --out " + (dir / "synth").string() + " --frames " +
         std::to_string(frames) + " --objects " + std::to_string(objects) +
         " --seed " + std::to_string(seed) +
         " --image-size 1200x360 --focal 700 " + extra;
}

const std::string kTwoRecordLabels =
    "Car 0 0 -1.5 100 100 200 200 1.5 1.6 3.9 1 0.5 20 0.1\n"
    "Car 0.1 1 0.4 300 120 420 260 1.4 1.7 4.1 -4 0.8 31 -2.9\n";

}  // namespace

TEST(CliParse, ReportsRecordCountsAndNormalizes) {
  fs::path dir = test_dir("parse_ok");
  write_all(dir / "a.txt", kTwoRecordLabels);
  RunResult r = run_cli("parse " + (dir / "a.txt").string() + " --out " +
                        (dir / "norm").string());
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("a.txt: 2 records"), std::string::npos);

  // The normalized copy must parse to the same records it was written from.
  RunResult again = run_cli("parse " + (dir / "norm" / "a.txt").string());
  EXPECT_EQ(again.code, 0);
  EXPECT_NE(again.out.find("2 records"), std::string::npos);
}

TEST(CliParse, CorruptFileFailsWithNonzeroExit) {
  fs::path dir = test_dir("parse_bad");
  write_all(dir / "bad.txt", "Car 0 0 -1.5 100 100 200 not_a_number\n");
  RunResult r = run_cli("parse " + (dir / "bad.txt").string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  EXPECT_NE(r.err.find("bad.txt"), std::string::npos);
}

TEST(CliParse, CalibKindPrintsIntrinsics) {
  fs::path dir = test_dir("parse_calib");
  RunResult s = run_cli(synth_args(dir, 1, 2, 3));
  ASSERT_EQ(s.code, 0) << s.err;
  RunResult r = run_cli("parse --kind calib " +
                        (dir / "synth" / "calib" / "000000.txt").string());
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("fx=700"), std::string::npos);
  EXPECT_NE(r.out.find("px=600"), std::string::npos);
}

TEST(CliPipeline, SynthEncodeDecodeEvalClosesTheLoop) {
  fs::path dir = test_dir("pipeline");
  RunResult s = run_cli(synth_args(dir, 3, 3, 9, "--targets-out " +
                                   (dir / "targets").string()));
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_NE(s.out.find("frames=3 objects="), std::string::npos);

  // encode from the label files must reproduce synth's own target tables
  // bit for bit: same grid, same camera, same arithmetic.
  RunResult e = run_cli("encode --labels " + (dir / "synth" / "labels").string() +
                        " --calib " + (dir / "synth" / "calib").string() + " --out " +
                        (dir / "enc").string() + " --image-size 1200x360");
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_NE(e.out.find("frames=3 objects=9"), std::string::npos);
  EXPECT_NE(e.out.find("assigned_cells="), std::string::npos);
  for (int i = 0; i < 3; ++i) {
    char stem[8];
    std::snprintf(stem, sizeof stem, "%06d", i);
    std::string a = read_all(dir / "targets" / (std::string(stem) + ".csv"));
    std::string b = read_all(dir / "enc" / (std::string(stem) + ".csv"));
    ASSERT_FALSE(a.empty());
    EXPECT_EQ(a, b) << "frame " << stem;
  }

  RunResult d = run_cli("decode --targets " + (dir / "enc").string() + " --calib " +
                        (dir / "synth" / "calib").string() + " --out " +
                        (dir / "dets").string());
  ASSERT_EQ(d.code, 0) << d.err;
  EXPECT_NE(d.out.find("detections=9"), std::string::npos);

  RunResult v = run_cli("eval --dets " + (dir / "dets").string() + " --gt " +
                        (dir / "synth" / "labels").string() + " --out " +
                        (dir / "report").string() + " --image-size 1200x360");
  ASSERT_EQ(v.code, 0) << v.err;

  auto j = nlohmann::json::parse(read_all(dir / "report.json"));
  ASSERT_TRUE(j.contains("ap"));
  int entries = 0, populated = 0;
  for (const auto& e2 : j["ap"]) {
    ++entries;
    if (e2["ap"].is_null()) continue;
    ++populated;
    EXPECT_EQ(e2["ap"].get<double>(), 1.0)
        << e2["regime"] << " iou " << e2["iou"] << " " << e2["mode"];
  }
  EXPECT_EQ(entries, 18);  // 3 regimes x 2 overlap modes x 3 thresholds
  EXPECT_GT(populated, 0);
  EXPECT_EQ(j["size_orientation"]["n"].get<long>(), 9);
}

TEST(CliEncode, EmptyLabelFileYieldsAnEmptyTable) {
  fs::path dir = test_dir("encode_empty");
  RunResult s = run_cli(synth_args(dir, 1, 2, 11));
  ASSERT_EQ(s.code, 0) << s.err;
  write_all(dir / "synth" / "labels" / "000000.txt", "");

  RunResult e = run_cli("encode --labels " + (dir / "synth" / "labels").string() +
                        " --calib " + (dir / "synth" / "calib").string() + " --out " +
                        (dir / "enc").string() + " --image-size 1200x360");
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_NE(e.out.find("frames=1 objects=0 assigned_cells=0"), std::string::npos);

  RunResult d = run_cli("decode --targets " + (dir / "enc").string() + " --calib " +
                        (dir / "synth" / "calib").string() + " --out " +
                        (dir / "dets").string());
  ASSERT_EQ(d.code, 0) << d.err;
  EXPECT_NE(d.out.find("detections=0"), std::string::npos);
}

TEST(CliEncode, MissingCalibProducesNoPartialOutput) {
  fs::path dir = test_dir("encode_nocalib");
  RunResult s = run_cli(synth_args(dir, 3, 2, 12));
  ASSERT_EQ(s.code, 0) << s.err;
  fs::remove(dir / "synth" / "calib" / "000001.txt");

  RunResult e = run_cli("encode --labels " + (dir / "synth" / "labels").string() +
                        " --calib " + (dir / "synth" / "calib").string() + " --out " +
                        (dir / "enc").string() + " --image-size 1200x360");
  EXPECT_NE(e.code, 0);
  EXPECT_NE(e.err.find("000001"), std::string::npos);
  EXPECT_EQ(count_files(dir / "enc", ".csv"), 0);
}

TEST(CliEncode, CorruptLabelFileProducesNoPartialOutput) {
  fs::path dir = test_dir("encode_badlabel");
  RunResult s = run_cli(synth_args(dir, 3, 2, 13));
  ASSERT_EQ(s.code, 0) << s.err;
  write_all(dir / "synth" / "labels" / "000002.txt", "Car 0 0\n");

  RunResult e = run_cli("encode --labels " + (dir / "synth" / "labels").string() +
                        " --calib " + (dir / "synth" / "calib").string() + " --out " +
                        (dir / "enc").string() + " --image-size 1200x360");
  EXPECT_NE(e.code, 0);
  EXPECT_NE(e.err.find("000002"), std::string::npos);
  EXPECT_EQ(count_files(dir / "enc", ".csv"), 0);
}

TEST(CliEval, FrameMismatchListsTheMissingFrames) {
  fs::path dir = test_dir("eval_mismatch");
  RunResult s = run_cli(synth_args(dir, 3, 2, 21, "--dets-out " +
                                   (dir / "dets").string()));
  ASSERT_EQ(s.code, 0) << s.err;
  fs::remove(dir / "dets" / "000001.txt");

  RunResult v = run_cli("eval --dets " + (dir / "dets").string() + " --gt " +
                        (dir / "synth" / "labels").string() + " --image-size 1200x360");
  EXPECT_NE(v.code, 0);
  EXPECT_NE(v.err.find("detections missing for frames"), std::string::npos);
  EXPECT_NE(v.err.find("000001"), std::string::npos);
  EXPECT_EQ(v.err.find("000000"), std::string::npos);
}

TEST(CliEval, EmptyDetectionDirScoresZero) {
  fs::path dir = test_dir("eval_empty");
  RunResult s = run_cli(synth_args(dir, 2, 3, 22));
  ASSERT_EQ(s.code, 0) << s.err;
  fs::create_directories(dir / "dets");

  RunResult v = run_cli("eval --dets " + (dir / "dets").string() + " --gt " +
                        (dir / "synth" / "labels").string() + " --out " +
                        (dir / "report").string() + " --image-size 1200x360");
  ASSERT_EQ(v.code, 0) << v.err;
  auto j = nlohmann::json::parse(read_all(dir / "report.json"));
  int populated = 0;
  for (const auto& e : j["ap"]) {
    if (e["ap"].is_null()) continue;
    ++populated;
    EXPECT_EQ(e["ap"].get<double>(), 0.0);
  }
  EXPECT_GT(populated, 0);
}

TEST(CliEval, ApSitsBetweenZeroAndOneAndDegradesWithNoise) {
  fs::path dir = test_dir("eval_noise");
  // the same scene and perturbation seeds at two noise scales: per-object
  // errors grow proportionally, so AP can only degrade
  RunResult lo = run_cli(synth_args(dir / "lo", 40, 3, 71,
                                    "--dets-out " + (dir / "dets_lo").string() +
                                        " --perturb-depth 0.4 --perturb-c2d 1"));
  RunResult hi = run_cli(synth_args(dir / "hi", 40, 3, 71,
                                    "--dets-out " + (dir / "dets_hi").string() +
                                        " --perturb-depth 1.2 --perturb-c2d 3"));
  ASSERT_EQ(lo.code, 0) << lo.err;
  ASSERT_EQ(hi.code, 0) << hi.err;

  auto moderate_bev_ap = [&](const std::string& dets, const std::string& gt) {
    RunResult v = run_cli("eval --dets " + dets + " --gt " + gt +
                          " --iou 0.5 --mode bev --image-size 1200x360 --format json");
    EXPECT_EQ(v.code, 0) << v.err;
    auto j = nlohmann::json::parse(v.out);
    for (const auto& e : j["ap"]) {
      if (e["regime"] == "moderate" && e["mode"] == "bev" &&
          e["iou"].get<double>() == 0.5 && !e["ap"].is_null())
        return e["ap"].get<double>();
    }
    ADD_FAILURE() << "moderate bev entry missing";
    return -1.0;
  };
  double ap_lo = moderate_bev_ap((dir / "dets_lo").string(),
                                 (dir / "lo" / "synth" / "labels").string());
  double ap_hi = moderate_bev_ap((dir / "dets_hi").string(),
                                 (dir / "hi" / "synth" / "labels").string());
  EXPECT_GT(ap_hi, 0.0);
  EXPECT_LT(ap_hi, 1.0);
  EXPECT_LT(ap_hi, ap_lo);
}

TEST(CliLosscheck, IdenticalTargetsScoreZero) {
  fs::path dir = test_dir("loss_zero");
  RunResult s = run_cli(synth_args(dir, 2, 3, 31, "--targets-out " +
                                   (dir / "targets").string()));
  ASSERT_EQ(s.code, 0) << s.err;

  RunResult l = run_cli("losscheck --pred " + (dir / "targets").string() + " --gt " +
                        (dir / "targets").string() + " --calib " +
                        (dir / "synth" / "calib").string() + " --format json");
  ASSERT_EQ(l.code, 0) << l.err;
  auto j = nlohmann::json::parse(l.out);
  EXPECT_EQ(j["n_frames"].get<long>(), 2);
  const auto& m = j["mean_losses"];
  EXPECT_EQ(m["l_bbox"].get<double>(), 0.0);
  EXPECT_EQ(m["l_corners"].get<double>(), 0.0);
  EXPECT_EQ(m["l_c3d"].get<double>(), 0.0);
  EXPECT_LT(m["total"].get<double>(), 1e-19);
}

TEST(CliLosscheck, PerturbedDepthShowsUpInTheDepthTermOnly) {
  fs::path dir = test_dir("loss_perturbed");
  RunResult s = run_cli(synth_args(
      dir, 2, 3, 32,
      "--targets-out " + (dir / "targets").string() + " --perturbed-out " +
          (dir / "pert").string() + " --perturb-depth 0.5"));
  ASSERT_EQ(s.code, 0) << s.err;

  RunResult l = run_cli("losscheck --pred " + (dir / "pert").string() + " --gt " +
                        (dir / "targets").string() + " --calib " +
                        (dir / "synth" / "calib").string() + " --format json");
  ASSERT_EQ(l.code, 0) << l.err;
  auto j = nlohmann::json::parse(l.out);
  const auto& m = j["mean_losses"];
  EXPECT_GT(m["l_zc"].get<double>(), 0.0);
  EXPECT_EQ(m["l_bbox"].get<double>(), 0.0);
  EXPECT_EQ(m["l_c2d"].get<double>(), 0.0);
  EXPECT_EQ(m["l_corners"].get<double>(), 0.0);
  // depth error moves the decoded center along the viewing ray
  EXPECT_GT(m["l_c3d"].get<double>(), 0.0);
}

TEST(CliLosscheck, MissingPredictionFramesAreListed) {
  fs::path dir = test_dir("loss_missing");
  RunResult s = run_cli(synth_args(dir, 3, 2, 33, "--targets-out " +
                                   (dir / "targets").string()));
  ASSERT_EQ(s.code, 0) << s.err;
  fs::create_directories(dir / "pred");
  fs::copy_file(dir / "targets" / "000000.csv", dir / "pred" / "000000.csv",
                fs::copy_options::skip_existing);
  RunResult l = run_cli("losscheck --pred " + (dir / "pred").string() + " --gt " +
                        (dir / "targets").string() + " --calib " +
                        (dir / "synth" / "calib").string());
  EXPECT_NE(l.code, 0);
  EXPECT_NE(l.err.find("missing for frames"), std::string::npos);
  EXPECT_NE(l.err.find("000001"), std::string::npos);
  EXPECT_NE(l.err.find("000002"), std::string::npos);
}

TEST(CliConfig, FileSuppliesDefaultsAndFlagsOverride) {
  fs::path dir = test_dir("config");
  write_all(dir / "cfg.ini", "seed=5\n");

  RunResult a = run_cli(synth_args(dir / "a", 1, 3, 5));
  ASSERT_EQ(a.code, 0) << a.err;
  // seed comes from the config file reached through the environment
  std::string syn = "synth --out " + (dir / "b" / "synth").string() +
                    " --frames 1 --objects 3 --image-size 1200x360 --focal 700";
  RunResult b = run_cli(syn, "MONO3D_CONFIG=" + (dir / "cfg.ini").string() + " ");
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(read_all(dir / "a" / "synth" / "labels" / "000000.txt"),
            read_all(dir / "b" / "synth" / "labels" / "000000.txt"));

  // an explicit flag beats the config file
  RunResult c = run_cli(synth_args(dir / "c", 1, 3, 6),
                        "MONO3D_CONFIG=" + (dir / "cfg.ini").string() + " ");
  ASSERT_EQ(c.code, 0) << c.err;
  RunResult d = run_cli(synth_args(dir / "d", 1, 3, 6));
  ASSERT_EQ(d.code, 0) << d.err;
  EXPECT_EQ(read_all(dir / "c" / "synth" / "labels" / "000000.txt"),
            read_all(dir / "d" / "synth" / "labels" / "000000.txt"));
  EXPECT_NE(read_all(dir / "c" / "synth" / "labels" / "000000.txt"),
            read_all(dir / "b" / "synth" / "labels" / "000000.txt"));
}

TEST(CliWorkers, WorkerCountNeverChangesResults) {
  fs::path dir = test_dir("workers");
  RunResult s = run_cli(synth_args(
      dir, 6, 3, 41,
      "--targets-out " + (dir / "targets").string() + " --perturbed-out " +
          (dir / "pert").string() + " --dets-out " + (dir / "dets").string() +
          " --perturb-depth 0.8 --perturb-c2d 2 --perturb-logit 1"));
  ASSERT_EQ(s.code, 0) << s.err;

  std::string eval_args = "eval --dets " + (dir / "dets").string() + " --gt " +
                          (dir / "synth" / "labels").string() +
                          " --image-size 1200x360 --format json";
  RunResult e1 = run_cli(eval_args + " --workers 1 --out " + (dir / "r1").string());
  RunResult e3 = run_cli(eval_args + " --workers 3 --out " + (dir / "r3").string());
  ASSERT_EQ(e1.code, 0) << e1.err;
  ASSERT_EQ(e3.code, 0) << e3.err;
  EXPECT_EQ(e1.out, e3.out);
  EXPECT_EQ(read_all(dir / "r1.json"), read_all(dir / "r3.json"));
  EXPECT_EQ(read_all(dir / "r1.txt"), read_all(dir / "r3.txt"));
  EXPECT_EQ(read_all(dir / "r1_bins.csv"), read_all(dir / "r3_bins.csv"));

  std::string loss_args = "losscheck --pred " + (dir / "pert").string() + " --gt " +
                          (dir / "targets").string() + " --calib " +
                          (dir / "synth" / "calib").string() + " --format json";
  RunResult l1 = run_cli(loss_args + " --workers 1");
  RunResult l2 = run_cli(loss_args + " --workers 2");
  ASSERT_EQ(l1.code, 0) << l1.err;
  EXPECT_EQ(l1.out, l2.out);
}

TEST(CliReport, RerendersTheSameBytesInEveryFormat) {
  fs::path dir = test_dir("report");
  RunResult s = run_cli(synth_args(dir, 3, 3, 51, "--dets-out " +
                                   (dir / "dets").string() + " --perturb-depth 0.5"));
  ASSERT_EQ(s.code, 0) << s.err;
  RunResult v = run_cli("eval --dets " + (dir / "dets").string() + " --gt " +
                        (dir / "synth" / "labels").string() + " --out " +
                        (dir / "rep").string() + " --image-size 1200x360");
  ASSERT_EQ(v.code, 0) << v.err;

  std::string in = " --in " + (dir / "rep.json").string();
  RunResult t = run_cli("report" + in + " --format table");
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_EQ(t.out, read_all(dir / "rep.txt"));

  RunResult c = run_cli("report" + in + " --format csv");
  ASSERT_EQ(c.code, 0);
  EXPECT_EQ(c.out, read_all(dir / "rep_bins.csv"));

  RunResult j = run_cli("report" + in + " --format json");
  ASSERT_EQ(j.code, 0);
  EXPECT_EQ(j.out, read_all(dir / "rep.json"));
}

TEST(CliReport, RejectsUnknownSchemaVersions) {
  fs::path dir = test_dir("report_schema");
  write_all(dir / "bad.json", "{\"schema_version\": 99, \"ap\": []}");
  RunResult r = run_cli("report --in " + (dir / "bad.json").string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("schema"), std::string::npos);
}

TEST(CliSelftest, PassesAndIsByteDeterministic) {
  // default configuration: 100 frames through the closed loop
  RunResult a = run_cli("selftest --seed 7");
  RunResult b = run_cli("selftest --seed 7");
  ASSERT_EQ(a.code, 0) << a.out << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out.find("12/12 properties passed"), std::string::npos);
  EXPECT_NE(a.out.find("frames=100"), std::string::npos);
  EXPECT_EQ(a.out.find("FAIL"), std::string::npos);
}

TEST(CliSelftest, InjectedBugIsCaught) {
  RunResult r = run_cli("selftest --seed 7 --frames 5 --inject-bug");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("FAIL  encode-decode-identity"), std::string::npos);
}

TEST(CliSynth, RepeatedRunsAreBitIdentical) {
  fs::path dir = test_dir("synth_repeat");
  RunResult a = run_cli(synth_args(dir / "a", 2, 4, 61, "--truncation 0.5"));
  RunResult b = run_cli(synth_args(dir / "b", 2, 4, 61, "--truncation 0.5"));
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  for (int i = 0; i < 2; ++i) {
    char stem[8];
    std::snprintf(stem, sizeof stem, "%06d", i);
    EXPECT_EQ(read_all(dir / "a" / "synth" / "labels" / (std::string(stem) + ".txt")),
              read_all(dir / "b" / "synth" / "labels" / (std::string(stem) + ".txt")));
  }
}
