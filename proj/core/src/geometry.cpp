#include "ioubal/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ioubal {

Box Box::corners(double x1, double y1, double x2, double y2) {
  if (x2 < x1 || y2 < y1) {
    throw std::invalid_argument("Box::corners: x2 >= x1 and y2 >= y1 required");
  }
  return Box{x1, y1, x2, y2};
}

Box Box::centered(double cx, double cy, double w, double h) {
  if (w < 0.0 || h < 0.0) {
    throw std::invalid_argument("Box::centered: nonnegative width/height required");
  }
  return Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

bool BoxDelta::finite() const {
  return std::isfinite(dcx) && std::isfinite(dcy) && std::isfinite(dw) && std::isfinite(dh);
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) {
    return 0.0;
  }
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

BoxDelta encode(const Box& anchor, const Box& target) {
  if (anchor.w() <= 0.0 || anchor.h() <= 0.0 || target.w() <= 0.0 || target.h() <= 0.0) {
    throw std::domain_error("encode: anchor and target need strictly positive extent");
  }
  return BoxDelta{
      (target.cx() - anchor.cx()) / anchor.w(),
      (target.cy() - anchor.cy()) / anchor.h(),
      std::log(target.w() / anchor.w()),
      std::log(target.h() / anchor.h()),
  };
}

Box decode(const Box& anchor, const BoxDelta& delta) {
  if (anchor.w() <= 0.0 || anchor.h() <= 0.0) {
    throw std::domain_error("decode: anchor needs strictly positive extent");
  }
  if (!delta.finite()) {
    throw std::domain_error("decode: delta must be finite");
  }
  const double cx = anchor.cx() + delta.dcx * anchor.w();
  const double cy = anchor.cy() + delta.dcy * anchor.h();
  const double w = anchor.w() * std::exp(delta.dw);
  const double h = anchor.h() * std::exp(delta.dh);
  return Box::centered(cx, cy, w, h);
}

double bounded_iou(double delta_component, Axis axis, double w_t, double w_s) {
  const double d = std::abs(delta_component);
  if (axis == Axis::Size) {
    return std::exp(-d);
  }
  if (w_t <= 0.0 || w_s <= 0.0) {
    throw std::domain_error("bounded_iou: w_t and w_s must be positive");
  }
  if (d > w_t / w_s) {
    throw std::domain_error("bounded_iou: center axis requires |d| <= w_t/w_s");
  }
  return (w_t - w_s * d) / (w_t + w_s * d);
}

Box clip_box(const Box& b, const Box& bounds) {
  return Box{
      std::clamp(b.x1, bounds.x1, bounds.x2),
      std::clamp(b.y1, bounds.y1, bounds.y2),
      std::clamp(b.x2, bounds.x1, bounds.x2),
      std::clamp(b.y2, bounds.y1, bounds.y2),
  };
}

}  // namespace ioubal
