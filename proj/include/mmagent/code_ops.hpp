#pragma once

// Static detection of image operations in model-written Python. Feeds the
// function classification and the operation-kind distribution report.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mmagent::code_ops {

enum class OpKind {
  Crop,
  Resize,
  ZoomIn,
  Rotate,
  Flip,
  Contrast,
  Brightness,
  Sharpen,
  Denoise,
  Grayscale,
  Threshold,
  EdgeDetect,
  Annotate,
  PixelAnalysis,
};

std::string_view op_kind_str(OpKind k);

/// Operation kinds present in `code`, in enum order, without duplicates.
std::vector<OpKind> detect_operations(std::string_view code);

bool has_op(const std::vector<OpKind>& ops, OpKind k);

/// Path literal passed to Image.open / cv2.imread, when there is one.
std::optional<std::string> source_image(std::string_view code);

/// Short imperative phrase, e.g. "Crop and zoom into the image".
std::string describe_operations(const std::vector<OpKind>& ops);

}  // namespace mmagent::code_ops
