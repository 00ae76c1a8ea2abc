// Drives the trigon_cli binary (path in TRIGON_CLI) on hand-written datasets.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "trigon/graph.hpp"

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> data_lines(const fs::path& p) {
  std::vector<std::string> out;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') out.push_back(line);
  }
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const char* exe = std::getenv("TRIGON_CLI");
    if (!exe) GTEST_SKIP() << "TRIGON_CLI not set";
    exe_ = exe;
    root_ = fs::temp_directory_path() /
            ("trigon_cli_" + std::to_string(::getpid()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override {
    if (!root_.empty()) fs::remove_all(root_);
  }

  int run(const std::string& args) const {
    const int rc = std::system(("\"" + exe_ + "\" " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  }

  // Dataset with features[i] = (x_i, y_i) and labels[i].
  fs::path write_dataset(const std::string& name, const std::vector<std::pair<int, int>>& edges,
                         const std::vector<std::pair<double, double>>& xy, const std::vector<int>& labels) const {
    auto dir = root_ / name;
    fs::create_directories(dir);
    std::ofstream e(dir / "edges.tsv"), f(dir / "features.tsv"), l(dir / "labels.tsv");
    for (auto [u, v] : edges) e << u << '\t' << v << '\n';
    for (std::size_t i = 0; i < xy.size(); ++i) f << i << '\t' << xy[i].first << '\t' << xy[i].second << '\n';
    for (std::size_t i = 0; i < labels.size(); ++i) l << i << '\t' << labels[i] << '\n';
    return dir;
  }

  fs::path k4() const {
    return write_dataset("k4", {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}, {{0, 0}, {1, 0}, {0, 1}, {1, 1.2}},
                         {0, 0, 1, 1});
  }

  // Two well-separated clusters of 15, each a path plus chords.
  fs::path separable() const {
    std::vector<std::pair<int, int>> e;
    std::vector<std::pair<double, double>> xy;
    std::vector<int> y;
    for (int c = 0; c < 2; ++c) {
      for (int i = 0; i < 15; ++i) {
        const int id = 15 * c + i;
        if (i > 0) e.push_back({id - 1, id});
        if (i > 1) e.push_back({id - 2, id});
        xy.push_back({10.0 * c + 0.1 * (i % 5), -10.0 * c + 0.13 * (i / 5)});
        y.push_back(c);
      }
    }
    return write_dataset("sep", e, xy, y);
  }

  std::string exe_;
  fs::path root_;
};

double report_value(const std::string& text, const std::string& key) {
  auto pos = text.find("\n" + key + " = ");
  if (pos == std::string::npos) return NAN;
  return std::stod(text.substr(pos + key.size() + 4));
}

}  // namespace

TEST_F(Cli, DiagnoseK4) {
  auto out = root_ / "out";
  ASSERT_EQ(run("diagnose --data " + k4().string() + " --out " + out.string()), 0);
  auto rep = slurp(out / "diagnostics.txt");
  EXPECT_NEAR(report_value(rep, "lambda2"), 4.0 / 3.0, 1e-9);
  EXPECT_NE(rep.find("\ndiameter = 1\n"), std::string::npos);
  for (const char* name : {"diagnostics.txt", "curve.csv", "config.txt"}) EXPECT_TRUE(fs::exists(out / name)) << name;
}

TEST_F(Cli, DiagnosePathResistancesAreOne) {
  std::vector<std::pair<int, int>> e;
  std::vector<std::pair<double, double>> xy;
  std::vector<int> y;
  for (int i = 0; i < 10; ++i) {
    if (i) e.push_back({i - 1, i});
    xy.push_back({double(i), double(i * i % 7)});
    y.push_back(i % 2);
  }
  auto out = root_ / "out";
  ASSERT_EQ(run("diagnose --data " + write_dataset("p10", e, xy, y).string() + " --out " + out.string()), 0);
  auto rep = slurp(out / "diagnostics.txt");
  std::istringstream in(rep.substr(rep.find("u\tv\ttriangles\tcurvature\tresistance\n")));
  std::string line;
  std::getline(in, line);
  int rows = 0;
  while (std::getline(in, line) && !line.empty()) {
    std::istringstream ls(line);
    double u, v, t, c, r;
    ls >> u >> v >> t >> c >> r;
    EXPECT_NEAR(r, 1.0, 1e-9);
    ++rows;
  }
  EXPECT_EQ(rows, 9);
}

TEST_F(Cli, DiagnoseDisconnectedWarnsAndReportsComponents) {
  auto d = write_dataset("two", {{0, 1}, {1, 2}, {0, 2}, {3, 4}, {4, 5}},
                         {{0, 0}, {1, 0}, {0, 1}, {5, 5}, {6, 5}, {5, 7}}, {0, 0, 0, 1, 1, 1});
  auto out = root_ / "out";
  ASSERT_EQ(run("diagnose --data " + d.string() + " --out " + out.string()), 0);
  auto rep = slurp(out / "diagnostics.txt");
  EXPECT_NE(rep.find("warning = disconnected (2 components)"), std::string::npos);
  EXPECT_NE(rep.find("[component original 0"), std::string::npos);
  EXPECT_NE(rep.find("[component original 1"), std::string::npos);
}

TEST_F(Cli, DiagnoseSeveralGraphsShareTheGrid) {
  auto d = separable();
  auto dr = root_ / "dr";
  ASSERT_EQ(run("rewire --data " + d.string() + " --method delaunay --out " + dr.string()), 0);
  auto out = root_ / "out";
  ASSERT_EQ(run("diagnose --data " + d.string() + " --edges " + (dr / "edges_rewired.tsv").string() + " --out " +
                out.string()),
            0);
  auto rows = data_lines(out / "curve.csv");
  std::vector<std::string> a, b;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    auto p = rows[i].substr(rows[i].find(',') + 1);
    p = p.substr(0, p.find(','));
    (rows[i].rfind("original,", 0) == 0 ? a : b).push_back(p);
  }
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, b);
}

TEST_F(Cli, RewireIdentityKeepsEdges) {
  // unsorted, reversed and duplicated input
  auto d = write_dataset("id", {{2, 0}, {1, 0}, {0, 1}, {3, 2}}, {{0, 0}, {1, 0}, {0, 1}, {1, 1}}, {0, 0, 1, 1});
  auto out = root_ / "out";
  ASSERT_EQ(run("rewire --data " + d.string() + " --method identity --out " + out.string()), 0);
  EXPECT_EQ(data_lines(out / "edges_rewired.tsv"), (std::vector<std::string>{"0\t1", "0\t2", "2\t3"}));
}

TEST_F(Cli, RewireDelaunayOnThreeNodes) {
  auto d = write_dataset("tri", {{0, 1}}, {{0, 0}, {1, 0}, {0, 1}}, {0, 1, 1});
  auto out = root_ / "out";
  ASSERT_EQ(run("rewire --data " + d.string() + " --method delaunay --out " + out.string()), 0);
  EXPECT_EQ(data_lines(out / "edges_rewired.tsv"), (std::vector<std::string>{"0\t1", "0\t2", "1\t2"}));
}

TEST_F(Cli, RewireDegenerateAndUnknownInputsFail) {
  // two nodes cannot be triangulated
  auto d = write_dataset("pair", {{0, 1}}, {{0, 0}, {1, 1}}, {0, 1});
  EXPECT_NE(run("rewire --data " + d.string() + " --method delaunay --out " + (root_ / "o1").string()), 0);
  EXPECT_EQ(run("rewire --data " + d.string() + " --method bogus --out " + (root_ / "o2").string()), 2);
  EXPECT_EQ(run("rewire --data " + (root_ / "missing").string() + " --method identity --out " + (root_ / "o3").string()),
            2);
}

TEST_F(Cli, RewireTrigonReproducible) {
  auto d = root_ / "sbm";
  ASSERT_EQ(run("synth --n 80 --dim 4 --seed 3 --out " + d.string()), 0);
  auto a = root_ / "a", b = root_ / "b";
  ASSERT_EQ(run("rewire --data " + d.string() + " --method trigon --seed 5 --epochs 20 --out " + a.string()), 0);
  ASSERT_EQ(run("rewire --data " + d.string() + " --method trigon --seed 5 --epochs 20 --out " + b.string()), 0);
  EXPECT_EQ(slurp(a / "edges_rewired.tsv"), slurp(b / "edges_rewired.tsv"));
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  EXPECT_FALSE(data_lines(a / "edges_rewired.tsv").empty());
}

TEST_F(Cli, TrainIdentityOnSeparableToy) {
  auto out = root_ / "out";
  ASSERT_EQ(run("train --data " + separable().string() + " --method identity --seeds 1 --out " + out.string()), 0);
  auto rows = data_lines(out / "metrics.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], "kind,method,depth,seed,n,status,best_epoch,val_acc,test_acc,test_stderr");
  EXPECT_NE(rows[1].find(",1,ok,"), std::string::npos);
  EXPECT_EQ(rows[1].substr(rows[1].rfind(',', rows[1].size() - 2) + 1), "1,");
}

TEST_F(Cli, IdenticalSeedsGiveZeroStderr) {
  auto out = root_ / "out";
  ASSERT_EQ(run("train --data " + separable().string() + " --method identity --seeds 4,4,4 --epochs 30 --out " +
                out.string()),
            0);
  auto rows = data_lines(out / "metrics.csv");
  EXPECT_EQ(rows.back().substr(rows.back().rfind(',') + 1), "0");
}

TEST_F(Cli, DepthSweepFourRowsPerMethod) {
  auto out = root_ / "out";
  ASSERT_EQ(run("train --data " + separable().string() + " --method identity,delaunay --depths 2,4,8,16 --epochs 5 " +
                "--out " + out.string()),
            0);
  auto rows = data_lines(out / "depth.csv");
  ASSERT_EQ(rows.size(), 9u);
  int identity = 0, dr = 0;
  for (const auto& r : rows) identity += r.rfind("identity,", 0) == 0, dr += r.rfind("delaunay,", 0) == 0;
  EXPECT_EQ(identity, 4);
  EXPECT_EQ(dr, 4);
}

TEST_F(Cli, DivergedSeedGivesNonzeroExit) {
  auto out = root_ / "out";
  EXPECT_EQ(run("train --data " + separable().string() + " --method identity --seeds 0 --lr 1e300 --epochs 5 --out " +
                out.string()),
            1);
  auto rows = data_lines(out / "metrics.csv");
  EXPECT_NE(rows[1].find("diverged"), std::string::npos);
}

TEST_F(Cli, InvalidConfigRejected) {
  auto d = separable().string();
  EXPECT_EQ(run("train --data " + d + " --dropout 1.0 --out " + (root_ / "a").string()), 2);
  EXPECT_EQ(run("train --data " + d + " --lr 0 --out " + (root_ / "b").string()), 2);
  EXPECT_EQ(run("train --data " + d + " --layers 0 --out " + (root_ / "c").string()), 2);
  EXPECT_EQ(run("ablate --data " + d + " --views '' --out " + (root_ / "d").string()), 2);
}

TEST_F(Cli, EveryOutputEmbedsConfig) {
  auto d = separable();
  auto out = root_ / "out";
  ASSERT_EQ(run("train --data " + d.string() + " --method identity --seeds 7 --epochs 3 --depths 2 --out " +
                out.string()),
            0);
  ASSERT_EQ(run("diagnose --data " + d.string() + " --out " + out.string()), 0);
  ASSERT_EQ(run("rewire --data " + d.string() + " --method identity --seed 7 --out " + out.string()), 0);
  for (const auto& e : fs::directory_iterator(out)) {
    auto text = slurp(e.path());
    EXPECT_NE(text.find("command="), std::string::npos) << e.path();
    EXPECT_NE(text.find("lr=0.005"), std::string::npos) << e.path();
  }
}

TEST_F(Cli, SynthRoundTripsThroughDiagnose) {
  auto d = root_ / "moons";
  ASSERT_EQ(run("synth --kind moons --n 60 --noise 0.1 --seed 2 --out " + d.string()), 0);
  EXPECT_TRUE(fs::exists(d / "split.tsv"));
  ASSERT_EQ(run("diagnose --data " + d.string() + " --out " + (root_ / "o").string()), 0);
  EXPECT_EQ(run("synth --kind nope --out " + (root_ / "x").string()), 2);
}
