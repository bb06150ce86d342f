#pragma once

namespace ioubal {

// Axis-aligned box stored in corner form (x1,y1,x2,y2); corner form keeps
// IoU and clipping branch-free. Center form is derived on demand.
// Invariant: x2 >= x1 and y2 >= y1. Zero-area boxes are representable
// (clipped detections produce them); regression targets must not be
// degenerate and encode() rejects them.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  double w() const { return x2 - x1; }
  double h() const { return y2 - y1; }
  double area() const { return w() * h(); }

  bool valid() const { return x2 >= x1 && y2 >= y1; }

  // Checked factories; throw std::invalid_argument on a negative extent.
  static Box corners(double x1, double y1, double x2, double y2);
  static Box centered(double cx, double cy, double w, double h);
};

// Parameterized regression offsets between two boxes, R-CNN convention:
// center offsets normalized by the anchor size, size offsets as log ratios.
struct BoxDelta {
  double dcx = 0.0;
  double dcy = 0.0;
  double dw = 0.0;
  double dh = 0.0;

  bool finite() const;
};

// Which kind of parameterized coordinate a bound refers to: center offsets
// (dcx, dcy) or log-size offsets (dw, dh).
enum class Axis { Center, Size };

// Intersection over union in [0,1]. Degenerate (zero-area) inputs yield 0,
// including two identical degenerate boxes.
double iou(const Box& a, const Box& b);

// dcx = (cx_t - cx_s)/w_s, dcy = (cy_t - cy_s)/h_s,
// dw = log(w_t/w_s), dh = log(h_t/h_s).
// Throws std::domain_error if either box has a non-positive extent.
BoxDelta encode(const Box& anchor, const Box& target);

// Inverse of encode: the box whose encode against `anchor` equals `delta`.
// Throws std::domain_error on a degenerate anchor or a non-finite delta.
Box decode(const Box& anchor, const BoxDelta& delta);

// Closed-form upper bound of IoU as a function of a single parameterized
// coordinate:
//   center axis: (w_t - w_s*|d|) / (w_t + w_s*|d|), defined for |d| <= w_t/w_s
//   size axis:   e^{-|d|}
// The center-axis precondition violation is a hard error; the bound is
// undefined there.
double bounded_iou(double delta_component, Axis axis, double w_t = 1.0, double w_s = 1.0);

// Intersection of b with bounds. Disjoint inputs clamp to a zero-area box
// at the nearest corner of bounds.
Box clip_box(const Box& b, const Box& bounds);

}  // namespace ioubal
