#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "bevforge/bev.hpp"
#include "bevforge/camera.hpp"
#include "bevforge/field.hpp"
#include "bevforge/ops.hpp"
#include "bevforge/synthscene.hpp"
#include "bevforge/tmae.hpp"

namespace py = pybind11;
using namespace bevforge;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  std::vector<int> shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = static_cast<int>(a.shape(i));
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor::from_data(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

CameraIntrinsics intrinsics_from_dict(const py::dict& d) {
  CameraIntrinsics k;
  k.fx = d["fx"].cast<double>();
  k.fy = d["fy"].cast<double>();
  k.cx = d["cx"].cast<double>();
  k.cy = d["cy"].cast<double>();
  k.width = d["width"].cast<int>();
  k.height = d["height"].cast<int>();
  return k;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "bevforge core operations";
  m.attr("__version__") = "0.1.0";

  m.def("matmul", [](const py::array_t<double>& a, const py::array_t<double>& b) {
    return array_from_tensor(matmul(tensor_from_array(a), tensor_from_array(b)));
  });

  m.def("matmul_with_grads",
        [](const py::array_t<double>& a, const py::array_t<double>& b) {
          Tape::active().reset();
          Tensor ta = tensor_from_array(a);
          Tensor tb = tensor_from_array(b);
          ta.node()->requires_grad = true;
          tb.node()->requires_grad = true;
          Tensor c = matmul(ta, tb);
          backward(sum(c));
          py::dict out;
          out["value"] = array_from_tensor(c);
          out["grad_a"] = array_from_tensor(Tensor::from_data(ta.shape(), ta.grad()));
          out["grad_b"] = array_from_tensor(Tensor::from_data(tb.shape(), tb.grad()));
          Tape::active().reset();
          return out;
        },
        "matmul plus d(sum)/da and d(sum)/db from the reverse-mode tape");

  m.def("bilinear_sample",
        [](const py::array_t<double>& img, const py::array_t<double>& coords) {
          auto r = bilinear_sample(tensor_from_array(img), tensor_from_array(coords));
          return py::make_tuple(array_from_tensor(r.values),
                                py::array_t<std::uint8_t>(static_cast<py::ssize_t>(r.valid.size()),
                                                          r.valid.data()));
        });

  m.def("positional_encoding", &positional_encoding, py::arg("u"), py::arg("v"), py::arg("d"),
        py::arg("bands"));

  m.def("project", [](const py::dict& K, double x, double y, double z) {
    const Projection p = project(intrinsics_from_dict(K), {x, y, z});
    return py::make_tuple(p.pixel.u, p.pixel.v, p.depth, p.valid);
  });
  m.def("unproject", [](const py::dict& K, double u, double v, double depth) {
    const Vec3 p = unproject(intrinsics_from_dict(K), {u, v}, depth);
    return py::make_tuple(p.x, p.y, p.z);
  });

  m.def("composite_depth",
        [](const py::array_t<double>& sigma, const py::array_t<double>& dist) {
          if (sigma.ndim() != 2 || dist.ndim() != 2)
            throw ShapeMismatch("composite_depth: sigma and dist must be [R×k]");
          const int R = static_cast<int>(sigma.shape(0)), k = static_cast<int>(sigma.shape(1));
          RaySamples s;
          s.num_rays = R;
          s.k = k;
          s.dist.assign(dist.data(), dist.data() + dist.size());
          s.delta.resize(s.dist.size());
          for (int r = 0; r < R; ++r)
            for (int i = 0; i < k; ++i)
              s.delta[r * k + i] = i + 1 < k ? s.dist[r * k + i + 1] - s.dist[r * k + i]
                                             : s.delta[r * k + k - 2];
          s.sigma = tensor_from_array(sigma);
          s.sigma = reshape(s.sigma, {R * k});
          auto c = composite_depth(s);
          return py::make_tuple(array_from_tensor(c.depth), array_from_tensor(c.wsum));
        },
        "emission-absorption expected termination distance per ray");

  m.def("generate_mask", [](int patch_size, double ratio, std::uint64_t seed, int height,
                            int width) {
    MaskSpec spec;
    spec.patch_size = patch_size;
    spec.ratio = ratio;
    spec.seed = seed;
    MaskSpec mask = generate_mask(spec, height, width);
    py::array_t<std::uint8_t> out({mask.patches_y, mask.patches_x});
    std::copy(mask.masked.begin(), mask.masked.end(), out.mutable_data());
    return out;
  });

  m.def("miou", [](const py::array_t<std::uint8_t>& pred, const py::array_t<std::uint8_t>& gt,
                   int num_classes) {
    BevMap p, g;
    p.nx = g.nx = static_cast<int>(pred.shape(0));
    p.nz = g.nz = static_cast<int>(pred.shape(1));
    p.classes.assign(pred.data(), pred.data() + pred.size());
    g.classes.assign(gt.data(), gt.data() + gt.size());
    const IouResult r = miou(p, g, num_classes);
    return py::make_tuple(r.per_class, r.mean);
  });

  m.def("bev_cross_entropy",
        [](const py::array_t<double>& logits, const py::array_t<std::uint8_t>& gt) {
          BevMap g;
          g.nx = static_cast<int>(gt.shape(0));
          g.nz = static_cast<int>(gt.shape(1));
          g.classes.assign(gt.data(), gt.data() + gt.size());
          return bev_cross_entropy(tensor_from_array(logits), g).value();
        });

  m.def("generate_scene", [](std::uint64_t seed, int frames) {
    SceneBundle b = generate_scene(random_scene(seed, frames));
    const int H = b.spec.height, W = b.spec.width;
    py::list rgb, depth, sem;
    for (const FrameData& f : b.frames) {
      py::array_t<double> r({3, H, W});
      std::copy(f.rgb.begin(), f.rgb.end(), r.mutable_data());
      rgb.append(r);
      py::array_t<double> d({H, W});
      std::copy(f.depth.begin(), f.depth.end(), d.mutable_data());
      depth.append(d);
      py::array_t<std::uint8_t> s({H, W});
      std::copy(f.fv_sem.begin(), f.fv_sem.end(), s.mutable_data());
      sem.append(s);
    }
    py::array_t<std::uint8_t> bev({b.bev_gt.nx, b.bev_gt.nz});
    std::copy(b.bev_gt.classes.begin(), b.bev_gt.classes.end(), bev.mutable_data());
    py::dict out;
    out["rgb"] = rgb;
    out["depth"] = depth;
    out["semantics"] = sem;
    out["bev"] = bev;
    return out;
  });

  py::register_exception<Error>(m, "BevforgeError");
}
