#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <sstream>

#include "tapegraph/bench.hpp"
#include "tapegraph/cli.hpp"
#include "tapegraph/gradcheck.hpp"
#include "tapegraph/layers.hpp"
#include "tapegraph/nn.hpp"

namespace py = pybind11;
using namespace tapegraph;

namespace {

Executor& default_executor() {
  static Executor ex(default_worker_count(1));
  return ex;
}

Executor& pick(Executor* ex) { return ex ? *ex : default_executor(); }

Tensor tensor_from_array(py::array_t<double, py::array::c_style | py::array::forcecast> a) {
  std::vector<std::size_t> dims(a.shape(), a.shape() + a.ndim());
  if (dims.empty()) dims.push_back(1);
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor(Shape(std::move(dims)), std::move(data));
}

py::array_t<double> tensor_to_array(const Tensor& t) {
  std::vector<py::ssize_t> dims(t.shape().dims().begin(), t.shape().dims().end());
  py::array_t<double> out(dims);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

template <class T>
void bind_arithmetic(py::class_<Layer<T>>& cls) {
  using L = Layer<T>;
  cls.def("__add__", [](const L& a, const L& b) { return a + b; })
      .def("__radd__", [](const L& a, const L& b) { return b + a; })
      .def("__sub__", [](const L& a, const L& b) { return a - b; })
      .def("__rsub__", [](const L& a, const L& b) { return b - a; })
      .def("__mul__", [](const L& a, const L& b) { return a * b; })
      .def("__rmul__", [](const L& a, const L& b) { return b * a; })
      .def("__neg__", [](const L& a) { return -a; });
}

}  // namespace

PYBIND11_MODULE(tapegraph, m) {
  m.doc() = "Closure-based reverse-mode automatic differentiation";

  // Handles are leaked on purpose: they must outlive interpreter teardown.
  static py::handle base = py::exception<Error>(m, "TapegraphError").release();
  static py::handle shape = py::exception<Error>(m, "ShapeError", base).release();
  static py::handle arithmetic = py::exception<Error>(m, "ArithmeticError", base).release();
  static py::handle usage = py::exception<Error>(m, "UsageError", base).release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      switch (e.kind()) {
        case ErrorKind::Shape:
          py::set_error(shape, e.what());
          break;
        case ErrorKind::Arithmetic:
          py::set_error(arithmetic, e.what());
          break;
        case ErrorKind::Usage:
          py::set_error(usage, e.what());
          break;
        case ErrorKind::WrappedPanic:
          py::set_error(base, e.what());
          break;
      }
    }
  });

  py::class_<Executor>(m, "Executor")
      .def(py::init<std::size_t>(), py::arg("workers"))
      .def_property_readonly("workers", &Executor::worker_count);

  py::class_<Tensor>(m, "Tensor")
      .def(py::init(&tensor_from_array), py::arg("array"))
      .def_static("zeros", [](std::vector<std::size_t> dims) { return Tensor::zeros(Shape(dims)); })
      .def_static("ones", [](std::vector<std::size_t> dims) { return Tensor::ones(Shape(dims)); })
      .def_property_readonly("shape", [](const Tensor& t) { return t.shape().dims(); })
      .def("numpy", &tensor_to_array)
      .def("tolist", [](const Tensor& t) { return std::vector<double>(t.data().begin(), t.data().end()); })
      .def("__eq__", [](const Tensor& a, const Tensor& b) { return a == b; })
      .def("__repr__", [](const Tensor& t) { return "Tensor(shape=" + t.shape().to_string() + ")"; });
  py::implicitly_convertible<py::array, Tensor>();

  py::class_<ScalarWeight>(m, "ScalarWeight")
      .def(py::init<double, double>(), py::arg("value"), py::arg("learning_rate"))
      .def_property_readonly("value", &ScalarWeight::value)
      .def("assign", &ScalarWeight::assign)
      .def_property_readonly("learning_rate", &ScalarWeight::learning_rate)
      .def_property_readonly("update_count", &ScalarWeight::update_count);

  py::class_<TensorWeight>(m, "TensorWeight")
      .def(py::init<Tensor, double>(), py::arg("value"), py::arg("learning_rate"))
      .def_property_readonly("value", &TensorWeight::value)
      .def("assign", &TensorWeight::assign)
      .def_property_readonly("learning_rate", &TensorWeight::learning_rate)
      .def_property_readonly("update_count", &TensorWeight::update_count);

  py::class_<ScalarLayer> scalar_layer(m, "ScalarLayer");
  scalar_layer.def(py::init([](double v) { return as_layer(v); }))
      .def(py::init([](const ScalarWeight& w) { return as_layer(w); }))
      .def("__truediv__", [](const ScalarLayer& a, const ScalarLayer& b) { return a / b; })
      .def("__rtruediv__", [](const ScalarLayer& a, const ScalarLayer& b) { return b / a; });
  bind_arithmetic(scalar_layer);
  py::implicitly_convertible<double, ScalarLayer>();
  py::implicitly_convertible<ScalarWeight, ScalarLayer>();

  py::class_<TensorLayer> tensor_layer(m, "TensorLayer");
  tensor_layer.def(py::init([](const Tensor& t) { return as_layer(t); }))
      .def(py::init([](py::array_t<double, py::array::c_style | py::array::forcecast> a) {
        return as_layer(tensor_from_array(a));
      }))
      .def(py::init([](const TensorWeight& w) { return as_layer(w); }))
      .def("__mul__", [](const TensorLayer& t, const ScalarLayer& s) { return s * t; })
      .def("__rmul__", [](const TensorLayer& t, const ScalarLayer& s) { return s * t; });
  bind_arithmetic(tensor_layer);
  py::implicitly_convertible<Tensor, TensorLayer>();
  py::implicitly_convertible<py::array, TensorLayer>();
  py::implicitly_convertible<TensorWeight, TensorLayer>();

  m.def("layer", [](const ScalarLayer& x) { return x; }, "Lift a number or weight into a layer");
  m.def("tensor_layer", [](const TensorLayer& x) { return x; });
  m.def("maximum", [](const ScalarLayer& a, const ScalarLayer& b) { return max(a, b); });
  m.def("dot", [](const TensorLayer& a, const TensorLayer& b) { return dot(a, b); });
  m.def("matmul", [](const TensorLayer& a, const TensorLayer& b) { return matmul(a, b); });
  m.def("add_row", [](const TensorLayer& a, const TensorLayer& b) { return add_row(a, b); });
  m.def("relu", [](const TensorLayer& a) { return relu(a); });
  m.def("sum", [](const TensorLayer& a) { return sum(a); });
  m.def("softmax_cross_entropy",
        [](const TensorLayer& a, std::vector<std::size_t> labels) { return softmax_cross_entropy(a, labels); });

  m.def(
      "train", [](const ScalarLayer& l, Executor* ex) { return run_blocking(train(l), pick(ex)); },
      py::arg("layer"), py::arg("executor") = nullptr, py::call_guard<py::gil_scoped_release>());
  m.def(
      "train", [](const TensorLayer& l, Executor* ex) { return run_blocking(train(l), pick(ex)); },
      py::arg("layer"), py::arg("executor") = nullptr, py::call_guard<py::gil_scoped_release>());
  m.def(
      "predict", [](const ScalarLayer& l, Executor* ex) { return run_blocking(predict(l), pick(ex)); },
      py::arg("layer"), py::arg("executor") = nullptr, py::call_guard<py::gil_scoped_release>());
  m.def(
      "predict", [](const TensorLayer& l, Executor* ex) { return run_blocking(predict(l), pick(ex)); },
      py::arg("layer"), py::arg("executor") = nullptr, py::call_guard<py::gil_scoped_release>());

  m.def(
      "diamond",
      [](std::size_t depth, bool naive, Executor* ex) {
        DiamondReport r = run_diamond(depth, naive ? GraphMode::Naive : GraphMode::RefCounted, pick(ex));
        return py::dict(py::arg("depth") = r.depth, py::arg("leaf_backward_calls") = r.leaf_backward_calls,
                        py::arg("node_count") = r.node_count, py::arg("min_node_flushes") = r.min_node_flushes,
                        py::arg("max_node_flushes") = r.max_node_flushes,
                        py::arg("counters_balanced") = r.counters_balanced,
                        py::arg("final_store") = r.final_store, py::arg("seconds") = r.seconds);
      },
      py::arg("depth"), py::arg("naive") = false, py::arg("executor") = nullptr);

  m.def(
      "gradcheck",
      [](std::vector<std::string> ops, std::size_t instances, std::uint64_t seed, Executor* ex) {
        GradcheckOptions o;
        o.ops = std::move(ops);
        o.instances = instances;
        o.seed = seed;
        py::list out;
        for (const auto& r : run_gradcheck(o, pick(ex))) {
          out.append(py::dict(py::arg("op") = r.op, py::arg("variant") = r.variant,
                              py::arg("max_rel_error") = r.max_rel_error, py::arg("passed") = r.passed()));
        }
        return out;
      },
      py::arg("ops") = std::vector<std::string>{}, py::arg("instances") = 100, py::arg("seed") = 0,
      py::arg("executor") = nullptr);

  m.def(
      "linreg",
      [](std::size_t iterations, std::uint64_t seed, double lr, Executor* ex) {
        Executor& e = pick(ex);
        LinRegOptions o;
        o.learning_rate = lr;
        auto model = make_linreg_model(3, seed, o);
        LinRegReport r = train_linreg(model, paper_linreg_pairs(), iterations, e);
        const double p = predict_linreg(model, {42.0, 43.0, 44.0}, e);
        return py::dict(py::arg("initial_loss") = r.initial_loss, py::arg("final_loss") = r.final_loss,
                        py::arg("prediction") = p, py::arg("loss_history") = r.loss_history);
      },
      py::arg("iterations") = 500, py::arg("seed") = 0, py::arg("lr") = LinRegOptions{}.learning_rate,
      py::arg("executor") = nullptr);

  m.def(
      "bench",
      [](std::size_t columns, std::size_t workers, bool skip, std::size_t steps, std::size_t warmup,
         std::uint64_t seed) {
        BenchOptions o;
        o.columns = columns;
        o.workers = workers;
        o.skip_unmatched = skip;
        o.steps = steps;
        o.warmup = warmup;
        o.windows = std::min<std::size_t>(5, steps);
        o.seed = seed;
        BenchRecord r;
        {
          py::gil_scoped_release release;
          r = run_bench(o);
        }
        return py::dict(py::arg("columns") = r.columns, py::arg("workers") = r.workers,
                        py::arg("skip_unmatched") = r.skip_unmatched, py::arg("iterations") = r.iterations,
                        py::arg("ops_per_sec") = r.ops_per_sec,
                        py::arg("ops_per_sec_stddev") = r.ops_per_sec_stddev);
      },
      py::arg("columns") = 4, py::arg("workers") = 1, py::arg("skip") = true, py::arg("steps") = 200,
      py::arg("warmup") = 10, py::arg("seed") = 0);

  m.def(
      "cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "tapegraph");
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run a tapegraph command; returns (exit_code, stdout, stderr)");
}
