#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dunet/config_io.hpp"
#include "dunet/serialize.hpp"
#include "dunet/trainer.hpp"

namespace fs = std::filesystem;

namespace {

const char* kCli = DUNET_CLI_PATH;

struct RunResult {
  int code;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("dunet_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

RunResult run(const std::string& args, const fs::path& dir) {
  fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
  std::string cmd = std::string(kCli) + " " + args + " > " + out.string() +
                    " 2> " + err.string();
  int rc = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

void write_config(const fs::path& p, const std::string& extra_train = "",
                  const std::string& extra_model = "") {
  std::ofstream f(p);
  f << "[model]\nseed = 3\n" << extra_model << "[train]\nepochs = 1\n"
    << "steps_per_epoch = 2\nbatch_size = 1\n" << extra_train
    << "[data]\nsize = 32\n";
}

}  // namespace

TEST(CliSynth, DeterministicFilesAndManifest) {
  auto d1 = scratch("synth1");
  auto d2 = scratch("synth2");
  std::string flags = "synth --n 3 --size 32 --classes 3 --seed 9 --out ";
  EXPECT_EQ(run(flags + (d1 / "data").string(), d1).code, 0);
  EXPECT_EQ(run(flags + (d2 / "data").string(), d2).code, 0);
  for (int i = 0; i < 3; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05d.dunt", i);
    ASSERT_TRUE(fs::exists(d1 / "data" / name)) << name;
    EXPECT_EQ(slurp(d1 / "data" / name), slurp(d2 / "data" / name)) << name;
  }
  EXPECT_TRUE(fs::exists(d1 / "data" / "manifest.tsv"));

  // files reproduce the in-process generator law
  auto want = dunet::make_synth_dataset<double>(3, 32, 3, 9);
  for (int i = 0; i < 3; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05d.dunt", i);
    auto got = dunet::sample_from_container<double>(
        dunet::load_container((d1 / "data" / name).string()));
    EXPECT_EQ(got.mask, want[i].mask) << name;
    EXPECT_EQ(got.image, want[i].image) << name;
  }
}

TEST(CliTrain, DeterministicCheckpoint) {
  auto d = scratch("train");
  write_config(d / "run.ini");
  ASSERT_EQ(
      run("synth --n 2 --size 32 --classes 2 --seed 5 --out " +
              (d / "data").string(),
          d)
          .code,
      0);
  std::string base = "train --config " + (d / "run.ini").string() +
                     " --data " + (d / "data").string() + " --out ";
  auto r1 = run(base + (d / "run1").string(), d);
  ASSERT_EQ(r1.code, 0) << r1.err;
  auto r2 = run(base + (d / "run2").string(), d);
  ASSERT_EQ(r2.code, 0) << r2.err;
  for (const char* f : {"checkpoint.dunt", "loss_log.tsv",
                        "config.resolved.ini"}) {
    ASSERT_TRUE(fs::exists(d / "run1" / f)) << f;
    EXPECT_EQ(slurp(d / "run1" / f), slurp(d / "run2" / f)) << f;
  }
  // resolved snapshot round-trips through the parser
  auto rc = dunet::parse_run_config(slurp(d / "run1" / "config.resolved.ini"));
  EXPECT_EQ(dunet::run_config_text(rc),
            slurp(d / "run1" / "config.resolved.ini"));
}

TEST(CliTrain, ExplodingLrExitsNumericWithStep) {
  auto d = scratch("train_nan");
  write_config(d / "run.ini", "lr0 = 1e30\nsteps_per_epoch = 4\n");
  ASSERT_EQ(
      run("synth --n 2 --size 32 --classes 2 --seed 5 --out " +
              (d / "data").string(),
          d)
          .code,
      0);
  auto r = run("train --config " + (d / "run.ini").string() + " --data " +
                   (d / "data").string() + " --out " + (d / "run").string(),
               d);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("step"), std::string::npos) << r.err;
}

TEST(CliTrain, UnknownConfigKeyIsUsageError) {
  auto d = scratch("badcfg");
  {
    std::ofstream f(d / "run.ini");
    f << "[train]\nwarmup_steps = 5\n";
  }
  auto r = run("train --config " + (d / "run.ini").string() +
                   " --data x --out y",
               d);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("warmup_steps"), std::string::npos) << r.err;
}

TEST(CliEval, ReportSchemaAndWindowFallback) {
  auto d = scratch("eval");
  write_config(d / "run.ini");
  ASSERT_EQ(
      run("synth --n 2 --size 32 --classes 2 --seed 5 --out " +
              (d / "data").string(),
          d)
          .code,
      0);
  ASSERT_EQ(run("train --config " + (d / "run.ini").string() + " --data " +
                    (d / "data").string() + " --out " + (d / "run").string(),
                d)
                .code,
            0);
  std::string base = "eval --checkpoint " +
                     (d / "run" / "checkpoint.dunt").string() + " --data " +
                     (d / "data").string() + " --out ";
  auto r = run(base + (d / "full.tsv").string(), d);
  ASSERT_EQ(r.code, 0) << r.err;
  std::string rep = slurp(d / "full.tsv");
  EXPECT_EQ(rep.find("sample_id\tclass\tdice\thd95\thd95_flag"), 0u);
  EXPECT_NE(rep.find("aggregate\tmean"), std::string::npos);
  EXPECT_NE(r.out.find("mean_dice"), std::string::npos);

  // a window covering the whole image equals the full pass
  auto rw = run(base + (d / "win.tsv").string() + " --window 32", d);
  ASSERT_EQ(rw.code, 0) << rw.err;
  EXPECT_EQ(slurp(d / "win.tsv"), rep);
}

TEST(CliGradcheck, DefaultPassesAndUnknownModuleRejected) {
  auto d = scratch("gradcheck");
  auto r = run("gradcheck --module losses --seed 1", d);
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_EQ(r.out.find("module\top\tmax_rel_err\tstatus"), 0u);
  EXPECT_NE(r.out.find("pass"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);

  auto bad = run("gradcheck --module nonsense", d);
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("nonsense"), std::string::npos);
}

TEST(CliParams, BreakdownCompareAndCrossover) {
  auto d = scratch("params");
  write_config(d / "run.ini");
  auto r = run("params --config " + (d / "run.ini").string() +
                   " --compare-baseline --dgrid 32,256,4096",
               d);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("module\tparams\ttrainable"), std::string::npos);
  EXPECT_NE(r.out.find("fapm_formula\t"), std::string::npos);
  EXPECT_NE(r.out.find("baseline_formula\t"), std::string::npos);
  EXPECT_NE(r.out.find("D\tfapm_count\tbaseline_count\tdelta"),
            std::string::npos);
  EXPECT_NE(r.out.find("crossover_d\t"), std::string::npos);
}

TEST(Cli, MissingSubcommandIsUsageError) {
  auto d = scratch("usage");
  EXPECT_EQ(run("", d).code, 2);
  EXPECT_EQ(run("synth", d).code, 2);  // --out is required
}
