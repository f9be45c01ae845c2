#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pathdiff/denoiser.hpp"
#include "pathdiff/diffusion.hpp"
#include "pathdiff/error.hpp"
#include "pathdiff/eval.hpp"
#include "pathdiff/geometry.hpp"
#include "pathdiff/proposer.hpp"
#include "pathdiff/scene.hpp"
#include "pathdiff/stats.hpp"

namespace py = pybind11;
using namespace pathdiff;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Path path_from_array(const Array& a, double dt) {
  if (a.ndim() != 2 || a.shape(1) != 2) throw DomainError("path arrays must have shape (n, 2)");
  Path p;
  p.dt = dt;
  const auto r = a.unchecked<2>();
  for (py::ssize_t j = 0; j < r.shape(0); ++j) p.waypoints.push_back({r(j, 0), r(j, 1)});
  return p;
}

Array path_to_array(const Path& p) {
  Array out({static_cast<py::ssize_t>(p.size()), py::ssize_t{2}});
  auto w = out.mutable_unchecked<2>();
  for (std::size_t j = 0; j < p.size(); ++j) {
    w(j, 0) = p.waypoints[j].x;
    w(j, 1) = p.waypoints[j].y;
  }
  return out;
}

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

OrientedBox box(double cx, double cy, double heading, double length, double width) {
  return OrientedBox{cx, cy, heading, length, width};
}

}  // namespace

PYBIND11_MODULE(pathdiff, m) {
  m.doc() = "Scenario generation, noise statistics, diffusion and evaluation for planning-path refinement.";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<DegenerateError>(m, "DegenerateError", base.ptr());

  py::class_<KsResult>(m, "KsResult")
      .def_readonly("d_n", &KsResult::d_n)
      .def_readonly("p_value", &KsResult::p_value)
      .def_readonly("n", &KsResult::n)
      .def_readonly("passed", &KsResult::passed);

  m.def("generate_scenario", [](std::uint64_t seed) { return scenario_to_json(generate_scenario(seed, {})); },
        py::arg("seed"), "Scenario for `seed` under the default config, as a JSON line.");
  m.def(
      "ground_truth_path",
      [](const std::string& scenario) { return path_to_array(scenario_from_json(scenario).gt_path); },
      py::arg("scenario"));
  m.def(
      "rasterize",
      [](const std::string& scenario) {
        const BevGrid g = rasterize_bev(scenario_from_json(scenario), GridConfig{});
        Array out({g.channels, g.height, g.width});
        std::copy(g.data.begin(), g.data.end(), out.mutable_data());
        return out;
      },
      py::arg("scenario"), "Bird's-eye-view grid of shape (channels, height, width).");
  m.def(
      "propose",
      [](const std::string& scenario, double std_x, double std_y, std::uint64_t seed) {
        const NoiseModel noise{0.0, 0.0, std_x, std_y, 0};
        return serialize_response(propose(scenario_from_json(scenario), noise, seed));
      },
      py::arg("scenario"), py::arg("std_x") = 0.5, py::arg("std_y") = 0.5, py::arg("seed") = 1);
  m.def(
      "proposed_path",
      [](const std::string& response) { return path_to_array(parse_response(response).proposed_path); },
      py::arg("response"));

  m.def("normal_cdf", &normal_cdf, py::arg("z"));
  m.def("kolmogorov_sf", &kolmogorov_sf, py::arg("t"));
  m.def(
      "ks_statistic", [](const Array& s, double mean, double std) { return ks_statistic(to_vector(s), mean, std); },
      py::arg("samples"), py::arg("mean"), py::arg("std"));
  m.def(
      "ks_normality", [](const Array& s, double alpha) { return ks_normality(to_vector(s), alpha); },
      py::arg("samples"), py::arg("alpha") = 0.05);

  m.def(
      "schedule",
      [](std::size_t steps, double beta_start, double beta_end) {
        const DiffusionSchedule s = make_schedule(steps, beta_start, beta_end);
        return py::make_tuple(Array(s.beta.size(), s.beta.data()), Array(s.alpha_bar.size(), s.alpha_bar.data()));
      },
      py::arg("steps") = 100, py::arg("beta_start") = 1e-4, py::arg("beta_end") = 0.02,
      "(beta, alpha_bar) arrays.");
  m.def(
      "reverse_step",
      [](const Array& noisy, const Array& prediction, double t_now, double t_next) {
        return path_to_array(
            reverse_step(path_from_array(noisy, kDefaultDt), path_from_array(prediction, kDefaultDt), t_now, t_next));
      },
      py::arg("noisy"), py::arg("prediction"), py::arg("t_now"), py::arg("t_next"));

  m.def(
      "sat_overlap",
      [](std::array<double, 5> a, std::array<double, 5> b) {
        return sat_overlap(box(a[0], a[1], a[2], a[3], a[4]), box(b[0], b[1], b[2], b[3], b[4]));
      },
      py::arg("a"), py::arg("b"), "Boxes are (cx, cy, heading, length, width).");
  m.def(
      "boxes_intersect",
      [](std::array<double, 5> a, std::array<double, 5> b) {
        return boxes_intersect(box(a[0], a[1], a[2], a[3], a[4]), box(b[0], b[1], b[2], b[3], b[4]));
      },
      py::arg("a"), py::arg("b"));
  m.def(
      "l2_at_horizons",
      [](const Array& prediction, const Array& gt, bool point) {
        const HorizonL2 h = l2_at_horizons(path_from_array(prediction, kDefaultDt), path_from_array(gt, kDefaultDt),
                                           point ? L2Mode::kPoint : L2Mode::kAverage);
        return py::make_tuple(h.l2_1s, h.l2_2s, h.l2_3s, h.avg);
      },
      py::arg("prediction"), py::arg("gt"), py::arg("point") = false);

  m.def(
      "grad_check", [](double eps, std::uint64_t seed) { return grad_check(DenoiserConfig{}, eps, seed); },
      py::arg("eps") = 1e-5, py::arg("seed") = 1, "Max relative gradient error for the default denoiser.");
}
