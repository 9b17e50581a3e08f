#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "openmap/cli.hpp"

using namespace openmap;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string out, err;
  json report() const { return json::parse(out); }
};

Outcome run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run(std::move(args), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("openmap_cli_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                         "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string write(const std::string& name, const Matrix& m) const { return write(name, matrix_to_json(m)); }
  std::string write(const std::string& name, const json& j) const {
    const std::string p = (path_ / name).string();
    std::ofstream(p) << j.dump();
    return p;
  }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

Matrix mat(int r, int c, std::initializer_list<double> v) {
  Matrix m(r, c);
  auto it = v.begin();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = *it++;
  return m;
}

}  // namespace

TEST(Cli, OpennessCheckRankOnePair) {
  TempDir d;
  Outcome o = run_cli({"openness", "check", "--w1", d.write("w1.json", mat(2, 1, {1, 2})), "--w2",
                       d.write("w2.json", mat(1, 2, {1, 1}))});
  ASSERT_EQ(o.code, 0) << o.err;
  json r = o.report();
  EXPECT_TRUE(r["result"]["open"].get<bool>());
  EXPECT_EQ(r["config"]["command"], "openness check");
  EXPECT_EQ(r["config"]["seed"], 12345u);
}

TEST(Cli, OpennessCheckWithWitnesses) {
  TempDir d;
  Outcome o = run_cli({"openness", "check", "--witnesses", "--w1", d.write("w1.json", Matrix::Zero(3, 2)), "--w2",
                       d.write("w2.json", Matrix::Zero(2, 3))});
  ASSERT_EQ(o.code, 0) << o.err;
  json r = o.report()["result"];
  Matrix w2t = matrix_from_json(r["witness_w2_tilde"]);
  EXPECT_EQ(rank(w2t), 2);
}

TEST(Cli, FixtureAppendix) {
  Outcome o = run_cli({"net", "fixture", "--name", "appendix-d"});
  ASSERT_EQ(o.code, 0) << o.err;
  json r = o.report()["result"];
  EXPECT_EQ(r["objective"].get<double>(), 2.0);
  EXPECT_EQ(r["status"], "SpuriousLocalMin");
}

TEST(Cli, SymSolveZero) {
  TempDir d;
  Outcome o = run_cli({"sym", "solve", "--sigma", d.write("s.json", mat(3, 1, {1, 2, 0.5})), "--r",
                       d.write("r.json", Matrix::Zero(3, 3))});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(max_abs(matrix_from_json(o.report()["result"]["P"])), 0.0);
}

TEST(Cli, SymSolveRefusalExitCode) {
  TempDir d;
  Outcome o = run_cli({"sym", "solve", "--sigma", d.write("s.json", mat(1, 1, {1})), "--r",
                       d.write("r.json", mat(1, 1, {-2}))});
  EXPECT_EQ(o.code, 3);
  json e = json::parse(o.err);
  EXPECT_EQ(e["error"]["kind"], "DeltaTooLarge");
}

TEST(Cli, RealizeRoundTrip) {
  TempDir d;
  const Matrix w1 = mat(2, 1, {1, 2}), w2 = mat(1, 2, {1, 1});
  Rng rng(5);
  const Matrix target = sample_feasible_target(w1 * w2, 1, 1e-6, rng);
  Outcome o = run_cli({"realize", "--w1", d.write("w1.json", w1), "--w2", d.write("w2.json", w2), "--target",
                       d.write("t.json", target)});
  ASSERT_EQ(o.code, 0) << o.err;
  json r = o.report()["result"];
  const Matrix dw1 = matrix_from_json(r["delta_w1"]), dw2 = matrix_from_json(r["delta_w2"]);
  EXPECT_LE(((w1 + dw1) * (w2 + dw2) - target).norm(), 1e-10);
}

TEST(Cli, RealizeNotOpenIsDomainRefusal) {
  TempDir d;
  Outcome o = run_cli({"realize", "--w1", d.write("w1.json", mat(2, 1, {1, 1})), "--w2",
                       d.write("w2.json", mat(1, 2, {0, 0})), "--target", d.write("t.json", mat(2, 2, {1e-6, 0, 0, 0}))});
  EXPECT_EQ(o.code, 3);
  EXPECT_EQ(json::parse(o.err)["error"]["kind"], "NotOpen");
}

TEST(Cli, ClassifyFromFiles) {
  TempDir d;
  Counterexample ce = rank_deficient_y_fixture();
  Outcome o = run_cli({"net", "classify", "--weights", d.write("w.json", matrices_to_json(ce.point.weights)), "--x",
                       d.write("x.json", ce.X), "--y", d.write("y.json", ce.Y)});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(o.report()["result"]["status"], "SpuriousLocalMin");
}

TEST(Cli, CounterexampleNotConstructible) {
  Outcome o = run_cli({"net", "counterexample", "--dims", "4,2,2"});
  EXPECT_EQ(o.code, 3);
  EXPECT_EQ(json::parse(o.err)["error"]["kind"], "NotConstructible");
}

TEST(Cli, GdSweepIsReproducible) {
  std::vector<std::string> args{"--seed", "7", "--trials", "5", "net", "gd-sweep", "--dims", "2,1,2", "--samples", "2"};
  Outcome a = run_cli(args), b = run_cli(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  json r = a.report();
  EXPECT_EQ(r["result"]["records"].size(), 5u);
  EXPECT_EQ(r["config"]["seed"], 7u);
  Outcome c = run_cli({"--seed", "7", "--trials", "5", "--jobs", "2", "net", "gd-sweep", "--dims", "2,1,2", "--samples", "2"});
  EXPECT_EQ(c.report()["result"], r["result"]);
}

TEST(Cli, EnvironmentSeedAndFlagPrecedence) {
  ::setenv("OPENMAP_SEED", "99", 1);
  Outcome env = run_cli({"net", "fixture"});
  Outcome flag = run_cli({"--seed", "5", "net", "fixture"});
  ::unsetenv("OPENMAP_SEED");
  EXPECT_EQ(env.report()["config"]["seed"], 99u);
  EXPECT_EQ(flag.report()["config"]["seed"], 5u);
}

TEST(Cli, InputErrors) {
  EXPECT_EQ(run_cli({"openness", "check", "--w1", "/nonexistent.json", "--w2", "/nonexistent.json"}).code, 2);
  EXPECT_EQ(run_cli({"--bogus", "net", "fixture"}).code, 2);
  EXPECT_EQ(run_cli({"--tol-grad", "-1", "net", "fixture"}).code, 2);
  EXPECT_EQ(run_cli({"--jobs", "0", "net", "fixture"}).code, 2);
  EXPECT_EQ(run_cli({"net", "counterexample", "--dims", "2,x"}).code, 2);
  EXPECT_EQ(run_cli({}).code, 2);
  Outcome o = run_cli({"net", "frobnicate"});
  EXPECT_EQ(o.code, 2);
  EXPECT_EQ(json::parse(o.err)["error"]["kind"], "InvalidInput");
}

TEST(Cli, MalformedMatrix) {
  TempDir d;
  const std::string bad = d.write("bad.json", json::parse(R"({"rows":2,"cols":2,"data":[1]})"));
  EXPECT_EQ(run_cli({"sym", "certify", "--w", bad}).code, 2);
}

TEST(Cli, TextFormatAndOutFile) {
  TempDir d;
  const std::string out = d.file("report.txt");
  Outcome o = run_cli({"--format", "text", "--out", out, "net", "fixture", "--name", "intro"});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_TRUE(o.out.empty());
  std::ifstream f(out);
  std::stringstream ss;
  ss << f.rdbuf();
  EXPECT_NE(ss.str().find("result.objective: 0.5"), std::string::npos);
}

TEST(Cli, MatricesRoundTripThroughReports) {
  TempDir d;
  Rng rng(17);
  const Matrix w = gaussian_matrix(3, 2, rng);
  Outcome o = run_cli({"openness", "witnesses", "--w1", d.write("w1.json", w), "--w2",
                       d.write("w2.json", Matrix(gaussian_matrix(2, 3, rng)))});
  ASSERT_EQ(o.code, 0) << o.err;
  // Whatever came back parses to the same doubles when re-serialized.
  for (const char* key : {"w1_tilde", "w2_tilde"}) {
    const json& j = o.report()["result"][key];
    if (j.is_null()) continue;
    EXPECT_EQ(matrix_to_json(matrix_from_json(j)).dump(), j.dump());
  }
}

#ifdef OPENMAP_CLI_PATH
TEST(Cli, BinaryExitCodes) {
  const std::string bin = OPENMAP_CLI_PATH;
  EXPECT_EQ(std::system((bin + " net fixture > /dev/null 2>&1").c_str()), 0);
  const int code = std::system((bin + " net counterexample --dims 4,2,2 > /dev/null 2>&1").c_str());
  EXPECT_EQ(WEXITSTATUS(code), 3);
  const int parse = std::system((bin + " --nope > /dev/null 2>&1").c_str());
  EXPECT_EQ(WEXITSTATUS(parse), 2);
}
#endif
