#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dgcn/dataset.hpp"
#include "temp_dir.hpp"

using dgcn::Dataset;
using dgcn::DatasetError;
using testutil::TempDir;

TEST_CASE("load parses nodes, symmetrizes and dedups edges", "[dataset]") {
  TempDir tmp;
  auto nodes = tmp.write("nodes.tsv",
                         "0\t1.5,2\t0\n"
                         "2\t-1,0.25\t1\n"
                         "1\t0,0\t2\n");
  // (2,5)-style duplication: (0,2) appears twice plus once reversed.
  auto edges = tmp.write("edges.tsv", "0\t2\n0\t2\n2\t0\n1\t2\n1\t1\n");
  Dataset ds = dgcn::load_dataset(nodes, edges);
  REQUIRE(ds.num_nodes == 3);
  REQUIRE(ds.num_features == 2);
  REQUIRE(ds.num_classes == 3);
  REQUIRE(ds.labels == std::vector<int>{0, 2, 1});
  REQUIRE(ds.feature_row(2)[0] == -1.0);
  // self-loop (1,1) dropped, duplicates collapsed
  REQUIRE(ds.edges == std::vector<std::pair<std::size_t, std::size_t>>{{0, 2}, {1, 2}});
}

TEST_CASE("one node and no edges is a valid degenerate dataset", "[dataset]") {
  TempDir tmp;
  auto nodes = tmp.write("nodes.tsv", "0\t7\t0\n");
  auto edges = tmp.write("edges.tsv", "");
  Dataset ds = dgcn::load_dataset(nodes, edges);
  REQUIRE(ds.num_nodes == 1);
  REQUIRE(ds.edges.empty());
  REQUIRE_THROWS_AS(dgcn::homophily_ratio(ds), DatasetError);
}

TEST_CASE("malformed input names the file and line", "[dataset]") {
  TempDir tmp;
  auto edges = tmp.write("edges.tsv", "");
  SECTION("bad field count") {
    auto nodes = tmp.write("nodes.tsv", "0\t1,2\t0\n1\t3,4\n");
    try {
      dgcn::load_dataset(nodes, edges);
      FAIL("expected a throw");
    } catch (const DatasetError& e) {
      REQUIRE(std::string(e.what()).find("nodes.tsv:2") != std::string::npos);
    }
  }
  SECTION("bad number") {
    auto nodes = tmp.write("nodes.tsv", "0\t1,abc\t0\n");
    REQUIRE_THROWS_AS(dgcn::load_dataset(nodes, edges), DatasetError);
  }
  SECTION("duplicate id") {
    auto nodes = tmp.write("nodes.tsv", "0\t1\t0\n0\t2\t1\n");
    REQUIRE_THROWS_AS(dgcn::load_dataset(nodes, edges), DatasetError);
  }
  SECTION("edge endpoint out of range") {
    auto nodes = tmp.write("nodes.tsv", "0\t1\t0\n1\t2\t1\n");
    auto bad = tmp.write("bad_edges.tsv", "0\t5\n");
    REQUIRE_THROWS_AS(dgcn::load_dataset(nodes, bad), DatasetError);
  }
  SECTION("ragged feature rows") {
    auto nodes = tmp.write("nodes.tsv", "0\t1,2\t0\n1\t3\t1\n");
    REQUIRE_THROWS_AS(dgcn::load_dataset(nodes, edges), DatasetError);
  }
}

TEST_CASE("split files parse into masks and must cover every node", "[dataset]") {
  TempDir tmp;
  auto nodes = tmp.write("nodes.tsv", "0\t1\t0\n1\t2\t1\n2\t3\t0\n");
  auto edges = tmp.write("edges.tsv", "0\t1\n");
  auto split = tmp.write("split0.tsv", "0\ttrain\n1\tval\n2\ttest\n");
  Dataset ds = dgcn::load_dataset(nodes, edges, {split});
  REQUIRE(ds.splits.size() == 1);
  REQUIRE(ds.splits[0].train == std::vector<std::uint8_t>{1, 0, 0});
  REQUIRE(ds.splits[0].val == std::vector<std::uint8_t>{0, 1, 0});
  REQUIRE(ds.splits[0].test == std::vector<std::uint8_t>{0, 0, 1});

  auto partial = tmp.write("partial.tsv", "0\ttrain\n1\tval\n");
  REQUIRE_THROWS_AS(dgcn::load_dataset(nodes, edges, {partial}), DatasetError);
  auto unknown = tmp.write("unknown.tsv", "0\ttrain\n1\tval\n2\tholdout\n");
  REQUIRE_THROWS_AS(dgcn::load_dataset(nodes, edges, {unknown}), DatasetError);
}

TEST_CASE("homophily ratio counts undirected same-label edges", "[dataset]") {
  Dataset tri;
  tri.num_nodes = 3;
  tri.num_classes = 2;
  tri.num_features = 1;
  tri.features = {0, 0, 0};
  tri.labels = {1, 1, 1};
  tri.edges = {{0, 1}, {0, 2}, {1, 2}};
  REQUIRE(dgcn::homophily_ratio(tri) == 1.0);

  Dataset path = tri;
  path.labels = {0, 1, 0};
  path.edges = {{0, 1}, {1, 2}};
  REQUIRE(dgcn::homophily_ratio(path) == 0.0);

  path.labels = {0, 0, 1};
  REQUIRE(dgcn::homophily_ratio(path) == 0.5);
}

TEST_CASE("dataset round-trips through save and load", "[dataset]") {
  Dataset ds = dgcn::generate_synthetic(40, 4, 0.3, 7, 3, 1.0, 11);
  TempDir tmp;
  dgcn::save_dataset(ds, tmp.file("n.tsv"), tmp.file("e.tsv"));
  Dataset back = dgcn::load_dataset(tmp.file("n.tsv"), tmp.file("e.tsv"));
  REQUIRE(back.num_nodes == ds.num_nodes);
  REQUIRE(back.num_classes == ds.num_classes);
  REQUIRE(back.labels == ds.labels);
  REQUIRE(back.edges == ds.edges);
  REQUIRE(back.features.size() == ds.features.size());
  for (std::size_t i = 0; i < ds.features.size(); ++i)
    REQUIRE(std::abs(back.features[i] - ds.features[i]) <= 1e-12);
}

TEST_CASE("synthetic generator is deterministic and hits target homophily", "[dataset]") {
  Dataset a = dgcn::generate_synthetic(200, 5, 0.1, 32, 4, 1.0, 7);
  Dataset b = dgcn::generate_synthetic(200, 5, 0.1, 32, 4, 1.0, 7);
  REQUIRE(a.features == b.features);
  REQUIRE(a.edges == b.edges);
  REQUIRE(a.labels == b.labels);

  const double h = dgcn::homophily_ratio(a);
  REQUIRE(h >= 0.05);
  REQUIRE(h <= 0.15);

  Dataset c = dgcn::generate_synthetic(200, 5, 0.1, 32, 4, 1.0, 8);
  REQUIRE(a.edges != c.edges);
}

TEST_CASE("synthetic target extremes are exact", "[dataset]") {
  Dataset hom = dgcn::generate_synthetic(60, 3, 1.0, 4, 2, 0.5, 3);
  REQUIRE(dgcn::homophily_ratio(hom) == 1.0);
  Dataset het = dgcn::generate_synthetic(60, 3, 0.0, 4, 2, 0.5, 3);
  REQUIRE(dgcn::homophily_ratio(het) == 0.0);
}

TEST_CASE("synthetic homophily converges to the target", "[dataset][slow]") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Dataset ds = dgcn::generate_synthetic(1000, 5, 0.3, 8, 10, 1.0, seed);
    REQUIRE(std::abs(dgcn::homophily_ratio(ds) - 0.3) < 0.05);
  }
}

TEST_CASE("synthetic generator rejects infeasible arguments", "[dataset]") {
  REQUIRE_THROWS_AS(dgcn::generate_synthetic(5, 6, 0.5, 4, 2, 1.0, 1), DatasetError);
  REQUIRE_THROWS_AS(dgcn::generate_synthetic(10, 2, 0.5, 4, 10, 1.0, 1), DatasetError);
  REQUIRE_THROWS_AS(dgcn::generate_synthetic(10, 2, 1.5, 4, 2, 1.0, 1), DatasetError);
  // 3 classes, one node each: a same-class pick can never succeed.
  REQUIRE_THROWS_AS(dgcn::generate_synthetic(3, 3, 1.0, 4, 1, 1.0, 1), DatasetError);
}

TEST_CASE("stratified splits hit the per-class fractions", "[dataset]") {
  Dataset ds = dgcn::generate_synthetic(100, 1 + 1, 0.5, 4, 3, 1.0, 5);
  // reshape to a single-class dataset of 100 nodes
  for (int& l : ds.labels) l = 0;
  ds.num_classes = 1;
  auto splits = dgcn::make_splits(ds, {}, 1, 42);
  std::size_t tr = 0, va = 0, te = 0;
  for (std::size_t v = 0; v < 100; ++v) {
    tr += splits[0].train[v];
    va += splits[0].val[v];
    te += splits[0].test[v];
  }
  REQUIRE(tr == 48);
  REQUIRE(va == 32);
  REQUIRE(te == 20);
}

TEST_CASE("splits partition every class and are deterministic", "[dataset]") {
  Dataset ds = dgcn::generate_synthetic(83, 4, 0.4, 6, 3, 1.0, 9);
  auto a = dgcn::make_splits(ds, {}, 10, 13);
  auto b = dgcn::make_splits(ds, {}, 10, 13);
  REQUIRE(a.size() == 10);
  for (std::size_t s = 0; s < 10; ++s) {
    REQUIRE(a[s].train == b[s].train);
    REQUIRE(a[s].val == b[s].val);
    REQUIRE(a[s].test == b[s].test);
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
      std::size_t cnt = 0, tr = 0, va = 0, te = 0;
      for (std::size_t v = 0; v < ds.num_nodes; ++v) {
        if (static_cast<std::size_t>(ds.labels[v]) != c) continue;
        ++cnt;
        tr += a[s].train[v];
        va += a[s].val[v];
        te += a[s].test[v];
      }
      REQUIRE(tr + va + te == cnt);
      const double fcnt = static_cast<double>(cnt);
      REQUIRE(std::abs(static_cast<double>(tr) - 0.48 * fcnt) <= 1.0);
      REQUIRE(std::abs(static_cast<double>(va) - 0.32 * fcnt) <= 1.0);
    }
  }
  // distinct instances differ
  REQUIRE(a[0].train != a[1].train);
}

TEST_CASE("splits reject classes too small to stratify", "[dataset]") {
  Dataset ds;
  ds.num_nodes = 4;
  ds.num_classes = 2;
  ds.num_features = 1;
  ds.features = {0, 0, 0, 0};
  ds.labels = {0, 0, 0, 1};  // class 1 has a single node
  ds.edges = {{0, 1}};
  REQUIRE_THROWS_AS(dgcn::make_splits(ds, {}, 1, 1), DatasetError);
}

TEST_CASE("stats JSON mirrors the stats fields", "[dataset]") {
  Dataset ds = dgcn::generate_synthetic(50, 5, 0.2, 8, 3, 1.0, 2);
  auto st = dgcn::dataset_stats(ds);
  auto j = dgcn::stats_to_json(st);
  REQUIRE(j["num_nodes"] == 50);
  REQUIRE(j["num_classes"] == 5);
  REQUIRE(j["num_features"] == 8);
  REQUIRE(j["num_edges"] == ds.edges.size());
  REQUIRE(j["average_degree"].get<double>() ==
          Catch::Approx(2.0 * double(ds.edges.size()) / 50.0));
  REQUIRE(j["homophily_ratio"].get<double>() == dgcn::homophily_ratio(ds));
}
