#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tsm/bench.hpp"
#include "tsm/error.hpp"
#include "tsm/net.hpp"
#include "tsm/nn_ops.hpp"
#include "tsm/online.hpp"
#include "tsm/shift.hpp"
#include "tsm/synth.hpp"
#include "tsm/tensor_io.hpp"

namespace py = pybind11;
using namespace tsm;

namespace {

AxisLabels default_labels(std::size_t rank) {
  switch (rank) {
    case 5: return kActivationAxes;
    case 4: return kFrameAxes;
    case 3: return {Axis::N, Axis::T, Axis::C};
    case 2: return kMatrixAxes;
    case 1: return kVectorAxes;
    default: throw InvalidShape("arrays of rank " + std::to_string(rank) + " have no tensor layout");
  }
}

template <typename Scalar>
BasicTensor<Scalar> to_tensor(const py::array_t<Scalar, py::array::c_style | py::array::forcecast>& a) {
  Extents ext(a.shape(), a.shape() + a.ndim());
  std::vector<Scalar> data(a.data(), a.data() + a.size());
  return BasicTensor<Scalar>::from_data(std::move(ext), default_labels(ext.size()), std::move(data));
}

template <typename Scalar>
py::array_t<Scalar> to_array(const BasicTensor<Scalar>& t) {
  std::vector<py::ssize_t> shape(t.extents().begin(), t.extents().end());
  py::array_t<Scalar> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

bool is_double(const py::array& a) { return a.dtype().is(py::dtype::of<double>()); }

// Float64 arrays run the 64-bit path; everything else is converted to float32.
template <typename F>
py::array dispatch(const py::array& a, F&& f) {
  if (is_double(a)) return to_array(f(to_tensor<double>(a)));
  return to_array(f(to_tensor<float>(a)));
}

// Spec plus weights, the unit a Python caller works with.
struct Network {
  NetworkSpec spec;
  WeightStore weights;
};

py::dict weights_dict(const WeightStore& w) {
  py::dict d;
  for (const auto& [name, t] : w) d[py::str(name)] = to_array(t);
  return d;
}

}  // namespace

PYBIND11_MODULE(_tsm, m) {
  m.doc() = "Temporal shift operators, a small video CNN engine and its streaming runtime";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidShape>(m, "InvalidShape", base.ptr());
  py::register_exception<IndexError>(m, "IndexError", base.ptr());
  py::register_exception<InvalidSpec>(m, "InvalidSpec", base.ptr());
  py::register_exception<CacheMismatch>(m, "CacheMismatch", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<TrainingDiverged>(m, "TrainingDiverged", base.ptr());

  py::enum_<Padding>(m, "Padding").value("ZERO", Padding::Zero).value("CIRCULAR", Padding::Circular);
  py::enum_<ShiftMode>(m, "ShiftMode")
      .value("BIDIRECTIONAL", ShiftMode::Bidirectional)
      .value("UNIDIRECTIONAL", ShiftMode::Unidirectional);

  py::class_<ShiftSpec>(m, "ShiftSpec")
      .def(py::init([](std::size_t n_fwd, std::size_t n_bwd, Padding padding, ShiftMode mode) {
             return ShiftSpec{n_fwd, n_bwd, padding, mode};
           }),
           py::arg("n_fwd") = 0, py::arg("n_bwd") = 0, py::arg("padding") = Padding::Zero,
           py::arg("mode") = ShiftMode::Bidirectional)
      .def_static("per_direction", &ShiftSpec::per_direction, py::arg("channels"), py::arg("num") = 1,
                  py::arg("den") = 8, py::arg("mode") = ShiftMode::Bidirectional, py::arg("padding") = Padding::Zero)
      .def_readwrite("n_fwd", &ShiftSpec::n_fwd)
      .def_readwrite("n_bwd", &ShiftSpec::n_bwd)
      .def_readwrite("padding", &ShiftSpec::padding)
      .def_readwrite("mode", &ShiftSpec::mode)
      .def(py::self == py::self)
      .def("__repr__", [](const ShiftSpec& s) {
        return "ShiftSpec(n_fwd=" + std::to_string(s.n_fwd) + ", n_bwd=" + std::to_string(s.n_bwd) + ", " +
               to_string(s.padding) + ", " + to_string(s.mode) + ")";
      });

  m.def("shift_offline", [](const py::array& x, const ShiftSpec& s) {
    return dispatch(x, [&](const auto& t) { return shift_offline(t, s); });
  }, py::arg("x"), py::arg("spec"), "Shift an (N,T,C,H,W) activation along T.");
  m.def("shift_offline_naive", [](const py::array& x, const ShiftSpec& s) {
    return dispatch(x, [&](const auto& t) { return shift_offline_naive(t, s); });
  }, py::arg("x"), py::arg("spec"));
  m.def("shift_adjoint", [](const py::array& g, const ShiftSpec& s) {
    return dispatch(g, [&](const auto& t) { return shift_adjoint(t, s); });
  }, py::arg("grad"), py::arg("spec"));
  m.def("reverse_time", [](const py::array& x) {
    return dispatch(x, [](const auto& t) { return reverse_time(t); });
  }, py::arg("x"));
  m.def("bytes_moved", [](const ShiftSpec& s, std::array<std::size_t, 5> shape) {
    return bytes_moved(s, ActivationShape{shape[0], shape[1], shape[2], shape[3], shape[4]});
  }, py::arg("spec"), py::arg("shape"));
  m.def("consensus_average", [](const py::array& logits) {
    return dispatch(logits, [](const auto& t) { return consensus_average(t); });
  }, py::arg("logits"));

  m.def("read_tensor", [](const std::string& path) { return to_array(read_tensor(path)); }, py::arg("path"));
  m.def("write_tensor", [](const std::string& path, const py::array& a) { write_tensor(path, to_tensor<float>(a)); },
        py::arg("path"), py::arg("array"));

  py::class_<Network>(m, "Network")
      .def(py::init([](const std::string& spec_json, std::uint64_t seed) {
             auto spec = parse_spec(spec_json);
             auto w = init_weights(spec, seed);
             return Network{std::move(spec), std::move(w)};
           }),
           py::arg("spec_json"), py::arg("seed") = 0)
      .def_static("load", [](const std::string& spec_path, const std::string& weights_path) {
        auto spec = load_spec(spec_path);
        auto w = load_weights(weights_path);
        check_weights(spec, w);
        return Network{std::move(spec), std::move(w)};
      }, py::arg("spec_path"), py::arg("weights_path"))
      .def("save", [](const Network& n, const std::string& spec_path, const std::string& weights_path) {
        save_spec(n.spec, spec_path);
        save_weights(n.weights, weights_path);
      }, py::arg("spec_path"), py::arg("weights_path"))
      .def_property_readonly("spec_json", [](const Network& n) { return spec_to_json(n.spec); })
      .def_property_readonly("frames", [](const Network& n) { return n.spec.frames; })
      .def_property_readonly("num_classes", [](const Network& n) { return n.spec.num_classes; })
      .def("weights", [](const Network& n) { return weights_dict(n.weights); })
      .def("set_weight", [](Network& n, const std::string& name, const py::array& a) {
        auto it = n.weights.find(name);
        if (it == n.weights.end()) throw InvalidSpec("no weight named '" + name + "'");
        auto t = to_tensor<float>(a);
        if (t.extents() != it->second.extents()) throw InvalidShape("weight '" + name + "' has a different shape");
        it->second = std::move(t).reshaped(it->second.extents(), it->second.labels());
      }, py::arg("name"), py::arg("value"))
      .def("forward", [](const Network& n, const py::array& clip, bool bypass_shifts) {
        return to_array(forward_offline(to_tensor<float>(clip), n.spec, n.weights, {.bypass_shifts = bypass_shifts}));
      }, py::arg("clip"), py::arg("bypass_shifts") = false, "Per-frame logits (N, T, classes).")
      .def("cost", [](const Network& n) {
        const auto c = count_network(n.spec);
        return py::make_tuple(c.macs_per_frame, c.params);
      }, "(MACs per frame, parameters)");

  py::class_<StreamState>(m, "Stream")
      .def(py::init([](const Network& n, std::size_t batch, bool convert, std::size_t window) {
             return stream_init(n.spec, {.batch = batch, .convert_bidirectional = convert, .window = window});
           }),
           py::arg("network"), py::arg("batch") = 1, py::arg("convert_bidirectional") = false, py::arg("window") = 0)
      .def("step", [](StreamState& s, const Network& n, const py::array& frame) {
        auto r = stream_step(to_tensor<float>(frame), n.weights, s);
        return py::make_tuple(to_array(r.logits), to_array(r.consensus));
      }, py::arg("network"), py::arg("frame"), "Returns (frame logits, running consensus).")
      .def("reset", &stream_reset)
      .def_readonly("frames_seen", &StreamState::frames_seen)
      .def_readonly("warnings", &StreamState::warnings)
      .def_property_readonly("cache_bytes", &StreamState::cache_bytes);

  m.def("gen_dataset", [](std::uint64_t seed, std::size_t count, std::size_t frames, std::size_t height,
                          std::size_t width) {
    const auto clips = synth::gen_dataset(seed, count, frames, height, width);
    py::array_t<float> x({count, frames, std::size_t{1}, height, width});
    py::array_t<std::int64_t> labels(static_cast<py::ssize_t>(count));
    const std::size_t per_clip = frames * height * width;
    for (std::size_t i = 0; i < count; ++i) {
      std::copy(clips[i].clip.data().begin(), clips[i].clip.data().end(), x.mutable_data() + i * per_clip);
      labels.mutable_at(static_cast<py::ssize_t>(i)) = static_cast<std::int64_t>(clips[i].label);
    }
    return py::make_tuple(x, labels);
  }, py::arg("seed"), py::arg("count"), py::arg("frames") = 8, py::arg("height") = 16, py::arg("width") = 16,
     "Moving-square clips (count, T, 1, H, W) and labels (0 leftward, 1 rightward).");

  m.def("train_toy", [](const std::string& config_json, py::object seed) {
    auto cfg = synth::parse_train_config(config_json);
    if (!seed.is_none()) cfg.seed = seed.cast<std::uint64_t>();
    const auto split = synth::make_split(cfg);
    const auto spec = synth::toy_spec(cfg);
    synth::TrainResult r;
    {
      py::gil_scoped_release release;
      r = synth::train(spec, cfg, split.train, split.test);
    }
    py::list history;
    for (const auto& e : r.history) {
      history.append(py::dict(py::arg("epoch") = e.epoch, py::arg("train_loss") = e.train_loss,
                              py::arg("train_acc") = e.train_acc, py::arg("test_acc") = e.test_acc));
    }
    return py::make_tuple(Network{spec, std::move(r.weights)}, history);
  }, py::arg("config_json") = "{}", py::arg("seed") = py::none(),
     "Train the toy direction classifier; returns (network, per-epoch metrics).");

  m.def("bench_shift", [](std::array<std::size_t, 5> shape, const std::vector<std::string>& fractions,
                          std::size_t reps, std::uint64_t seed) {
    std::vector<bench::Fraction> fs;
    for (const auto& f : fractions) fs.push_back(bench::parse_fraction(f));
    const auto report = bench::bench_shift({shape[0], shape[1], shape[2], shape[3], shape[4]}, fs, reps, seed);
    py::list rows;
    for (const auto& r : report.rows) {
      rows.append(py::dict(py::arg("label") = r.label, py::arg("n_fwd") = r.n_fwd, py::arg("n_bwd") = r.n_bwd,
                           py::arg("bytes_moved") = r.bytes_moved, py::arg("median_ns") = r.median_ns,
                           py::arg("baseline_ns") = r.baseline_ns, py::arg("overhead_pct") = r.overhead_pct));
    }
    return rows;
  }, py::arg("shape"), py::arg("fractions"), py::arg("reps") = 20, py::arg("seed") = 0,
     "Time the offline shift against its zero-fraction pass; shape is (N, T, C, H, W).");
}
