// Copyright (c) 2026 moelab authors
// SPDX-License-Identifier: Apache-2.0
//
// SVG renderer tests: structure of emitted documents, determinism, input
// validation, and XML escaping.

#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "moelab/errors.hpp"
#include "moelab/svg.hpp"

using namespace moelab;
using Catch::Matchers::ContainsSubstring;

namespace {

int count_occurrences(const std::string& text, const std::string& needle) {
  int n = 0;
  size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    ++n;
    pos += needle.size();
  }
  return n;
}

}  // namespace

TEST_CASE("a two-point series renders one polyline", "[svg][line]") {
  const std::vector<Series> series = {{"val ppl", {0.0, 100.0}, {5.0, 3.0}}};
  const std::string svg = render_line_plot("loss", "step", "ppl", series);
  REQUIRE(svg.rfind("<svg", 0) == 0);
  REQUIRE_THAT(svg, ContainsSubstring("</svg>"));
  REQUIRE(count_occurrences(svg, "<polyline") == 1);
  REQUIRE(count_occurrences(svg, "<circle") == 2);  // point markers
  REQUIRE_THAT(svg, ContainsSubstring(">loss</text>"));
  REQUIRE_THAT(svg, ContainsSubstring(">step</text>"));
  REQUIRE_THAT(svg, ContainsSubstring(">ppl</text>"));
  REQUIRE_THAT(svg, ContainsSubstring(">val ppl</text>"));  // legend
  REQUIRE(svg.find("nan") == std::string::npos);
}

TEST_CASE("multiple series get distinct colors and legend rows", "[svg][line]") {
  const std::vector<Series> series = {{"a", {0, 1}, {1, 2}},
                                      {"b", {0, 1}, {2, 1}}};
  const std::string svg = render_line_plot("t", "x", "y", series);
  REQUIRE(count_occurrences(svg, "<polyline") == 2);
  REQUIRE_THAT(svg, ContainsSubstring("#1f77b4"));
  REQUIRE_THAT(svg, ContainsSubstring("#d62728"));
  REQUIRE_THAT(svg, ContainsSubstring(">a</text>"));
  REQUIRE_THAT(svg, ContainsSubstring(">b</text>"));
}

TEST_CASE("degenerate inputs still render finite documents", "[svg][line]") {
  // Constant series (zero y-range) and single points must not divide by zero.
  const std::string flat =
      render_line_plot("flat", "x", "y", {{"c", {0, 1, 2}, {4, 4, 4}}});
  REQUIRE(flat.find("nan") == std::string::npos);
  REQUIRE(flat.find("inf") == std::string::npos);
  const std::string point = render_line_plot("pt", "x", "y", {{"p", {7}, {3}}});
  REQUIRE(count_occurrences(point, "<polyline") == 0);
  REQUIRE(count_occurrences(point, "<circle") == 1);
}

TEST_CASE("line plot rejects bad input", "[svg][errors]") {
  REQUIRE_THROWS_AS(render_line_plot("t", "x", "y", {}), DataError);
  REQUIRE_THROWS_AS(render_line_plot("t", "x", "y", {{"e", {}, {}}}), DataError);
  REQUIRE_THROWS_AS(render_line_plot("t", "x", "y", {{"m", {1, 2}, {1}}}),
                    ShapeError);
  REQUIRE_THROWS_AS(
      render_line_plot("t", "x", "y",
                       {{"n", {0.0, 1.0}, {0.0, std::nan("")}}}),
      DataError);
}

TEST_CASE("plots are byte-identical for identical input", "[svg][determinism]") {
  const std::vector<Series> series = {{"s", {0, 1, 2}, {0.1, 0.7, 0.3}}};
  REQUIRE(render_line_plot("t", "x", "y", series) ==
          render_line_plot("t", "x", "y", series));
  const std::vector<std::vector<double>> m = {{1.0, 0.3}, {0.4, 1.0}};
  REQUIRE(render_heatmap("h", {"e0", "e1"}, m) ==
          render_heatmap("h", {"e0", "e1"}, m));
}

TEST_CASE("a 4x4 heatmap has 16 labeled cells", "[svg][heatmap]") {
  std::vector<std::vector<double>> m(4, std::vector<double>(4, 0.0));
  for (size_t i = 0; i < 4; ++i)
    for (size_t j = 0; j < 4; ++j)
      m[i][j] = i == j ? 1.0 : 0.1 * static_cast<double>(i + j);
  const std::string svg =
      render_heatmap("co-activation", {"e0", "e1", "e2", "e3"}, m);
  REQUIRE(count_occurrences(svg, "class=\"cell\"") == 16);
  // Row and column labels both appear.
  REQUIRE(count_occurrences(svg, ">e2</text>") == 2);
  REQUIRE_THAT(svg, ContainsSubstring(">co-activation</text>"));
  REQUIRE_THAT(svg, ContainsSubstring(">1.00</text>"));
}

TEST_CASE("heatmap rejects bad input", "[svg][errors]") {
  REQUIRE_THROWS_AS(render_heatmap("t", {}, {}), DataError);
  REQUIRE_THROWS_AS(render_heatmap("t", {"a"}, {{1.0, 2.0}}), ShapeError);
  REQUIRE_THROWS_AS(render_heatmap("t", {"a", "b"}, {{1.0, 2.0}}), ShapeError);
  REQUIRE_THROWS_AS(
      render_heatmap("t", {"a", "b"},
                     {{1.0, std::numeric_limits<double>::infinity()},
                      {0.0, 1.0}}),
      DataError);
}

TEST_CASE("titles and labels are XML-escaped", "[svg][escape]") {
  const std::string svg = render_line_plot(
      "a<b & c>d", "x\"q\"", "y", {{"s<1>", {0, 1}, {0, 1}}});
  REQUIRE_THAT(svg, ContainsSubstring("a&lt;b &amp; c&gt;d"));
  REQUIRE_THAT(svg, ContainsSubstring("x&quot;q&quot;"));
  REQUIRE_THAT(svg, ContainsSubstring("s&lt;1&gt;"));
  REQUIRE(svg.find("a<b") == std::string::npos);
}
