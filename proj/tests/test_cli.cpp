// Drives the fpn executable; its path is the first argument.

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

std::string g_cli;

struct Outcome {
  int code;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("fpn-cli-" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "tiny.cfg") << "classifier_epochs = 2\nnormal_epochs = 2\nper_epoch = 64\n"
                                        "normal_width = 2\nnormal_blocks = 2\nnormal_hidden = 8\nkappa = 2\n";
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static Outcome run(const std::string& args) {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = "cd '" + dir_.string() + "' && '" + g_cli + "' " + args + " >'" + out.string() +
                            "' 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  static void expect_usage_error(const Outcome& r) {
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(r.err.rfind("error: usage: ", 0), 0u) << r.err;
    EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
  }

  static fs::path dir_;
};

fs::path Cli::dir_;

const char* kStem = "cube_1500_0.01";

}  // namespace

TEST_F(Cli, GenDataIsDeterministic) {
  for (const char* d : {"a", "b"})
    ASSERT_EQ(run(std::string("gen-data --mesh builtin:cube --n 1500 --noise 0.01 --seed 5 --out ") + d).code, 0);
  for (const char* ext : {".gt.xyz", ".noisy.xyz", ".labels", ".features.xyz"}) {
    const std::string a = slurp(dir_ / "a" / (std::string(kStem) + ext));
    EXPECT_FALSE(a.empty()) << ext;
    EXPECT_EQ(a, slurp(dir_ / "b" / (std::string(kStem) + ext))) << ext;
  }
  ASSERT_EQ(run("gen-data --mesh builtin:cube --n 1500 --noise 0.01 --seed 6 --out c").code, 0);
  EXPECT_NE(slurp(dir_ / "a" / (std::string(kStem) + ".noisy.xyz")),
            slurp(dir_ / "c" / (std::string(kStem) + ".noisy.xyz")));
}

TEST_F(Cli, UsageErrorsExitTwo) {
  expect_usage_error(run(""));
  expect_usage_error(run("filter --bogus"));
  expect_usage_error(run("classify --in missing.xyz --models . --out x"));
  expect_usage_error(run("gen-data --out x"));
  expect_usage_error(run("gen-data --mesh builtin:cube --threads 0 --out x"));
  std::ofstream(dir_ / "bad.cfg") << "kapa = 3\n";
  expect_usage_error(run("gen-data --config bad.cfg --mesh builtin:cube --out x"));
}

TEST_F(Cli, RuntimeErrorsExitOne) {
  std::ofstream(dir_ / "broken.xyz") << "1 2 3\n4 5\n";
  const Outcome r = run("evaluate --gt broken.xyz --pred broken.xyz");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("broken.xyz:2"), std::string::npos) << r.err;
}

TEST_F(Cli, EndToEndWithTinyBudgets) {
  ASSERT_EQ(run("gen-data --config tiny.cfg --mesh builtin:cube --n 1500 --noise 0.01 --out e2e").code, 0);
  ASSERT_EQ(run("train-classifier --config tiny.cfg --in e2e --out e2e-models").code, 0);
  ASSERT_EQ(run("train-normals --config tiny.cfg --in e2e --out e2e-models").code, 0);
  for (const char* f : {"classifier.fpnnet", "normals-feature.fpnnet", "normals-non-feature.fpnnet", "config.txt"})
    EXPECT_TRUE(fs::exists(dir_ / "e2e-models" / f)) << f;

  const std::string noisy = std::string("e2e/") + kStem + ".noisy.xyz";
  const std::string gt = std::string("e2e/") + kStem + ".gt.xyz";
  ASSERT_EQ(run("classify --in " + noisy + " --models e2e-models --out scores.txt").code, 0);
  ASSERT_EQ(run("estimate-normals --in " + noisy + " --models e2e-models --out normals.xyz").code, 0);
  ASSERT_EQ(run("filter --snapshots --in " + noisy + " --models e2e-models --gt " + gt + " --out filtered.xyz").code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "filtered.iter1.xyz"));
  EXPECT_TRUE(fs::exists(dir_ / "filtered.iter2.xyz"));
  std::istringstream diag(slurp(dir_ / "filtered.xyz.iterations.txt"));
  std::string line;
  int rows = 0;
  while (std::getline(diag, line)) rows += !line.empty() && line[0] != '#';
  EXPECT_EQ(rows, 2);

  const Outcome ev = run("evaluate --gt " + gt + " --pred normals.xyz --labels e2e/" + kStem +
                     ".labels --scores scores.txt --out report.txt");
  ASSERT_EQ(ev.code, 0) << ev.err;
  std::map<std::string, double> keys;
  std::istringstream rep(ev.out);
  while (std::getline(rep, line)) {
    const auto eq = line.find(" = ");
    ASSERT_NE(eq, std::string::npos) << line;
    const std::string key = line.substr(0, eq), value = line.substr(eq + 3);
    keys[key] = value == "true" ? 1.0 : value == "false" ? 0.0 : std::stod(value);
  }
  for (const char* k : {"points", "msae", "pgp10", "pgp20", "rmse", "chamfer", "class_accuracy", "empty_prediction"})
    EXPECT_TRUE(keys.count(k)) << k;
  EXPECT_EQ(keys["points"], 1500);
  EXPECT_GE(keys["pgp20"], keys["pgp10"]);
  EXPECT_EQ(slurp(dir_ / "report.txt"), ev.out);

  ASSERT_EQ(run("export-errors --gt " + gt + " --pred filtered.xyz --out errors.ply").code, 0);
  EXPECT_EQ(slurp(dir_ / "errors.ply").rfind("ply\n", 0), 0u);
}

TEST_F(Cli, ThreadCountDoesNotChangeResults) {
  ASSERT_EQ(run("gen-data --config tiny.cfg --mesh builtin:cube --n 1500 --noise 0.01 --out th").code, 0);
  for (const char* t : {"1", "3"}) {
    const std::string m = std::string("th-models-") + t;
    ASSERT_EQ(run("train-classifier --config tiny.cfg --threads " + std::string(t) + " --in th --out " + m).code, 0);
    ASSERT_EQ(run("train-normals --config tiny.cfg --threads " + std::string(t) + " --in th --out " + m).code, 0);
    ASSERT_EQ(run("filter --threads " + std::string(t) + " --in th/" + kStem + ".noisy.xyz --models " + m +
                  " --out th-" + t + ".xyz")
                  .code,
              0);
  }
  for (const char* f : {"classifier.fpnnet", "normals-feature.fpnnet", "normals-non-feature.fpnnet"})
    EXPECT_EQ(slurp(dir_ / "th-models-1" / f), slurp(dir_ / "th-models-3" / f)) << f;
  EXPECT_EQ(slurp(dir_ / "th-1.xyz"), slurp(dir_ / "th-3.xyz"));
  EXPECT_FALSE(slurp(dir_ / "th-1.xyz").empty());
}

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  if (argc < 2) {
    std::cerr << "usage: test_cli <path to fpn>\n";
    return 2;
  }
  g_cli = fs::absolute(argv[1]).string();
  return RUN_ALL_TESTS();
}
