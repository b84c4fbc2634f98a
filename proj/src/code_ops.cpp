#include "mmagent/code_ops.hpp"

#include <algorithm>
#include <cctype>
#include <regex>

#include "mmagent/util.hpp"

namespace mmagent::code_ops {

namespace {

struct Pattern {
  OpKind kind;
  std::regex re;
};

const std::vector<Pattern>& patterns() {
  static const std::vector<Pattern> kPatterns = [] {
    const auto flags = std::regex::ECMAScript | std::regex::icase;
    return std::vector<Pattern>{
        {OpKind::Crop, std::regex(R"(\.crop\s*\(|\bcrop\w*\s*=|\[\s*\w+\s*:\s*\w+\s*,\s*\w+\s*:\s*\w+\s*\])", flags)},
        {OpKind::Resize, std::regex(R"(\.resize\s*\(|cv2\.resize|\.thumbnail\s*\()", flags)},
        {OpKind::Rotate, std::regex(R"(\.rotate\s*\(|cv2\.rotate|getRotationMatrix2D|ROTATE_)", flags)},
        {OpKind::Flip, std::regex(R"(FLIP_LEFT_RIGHT|FLIP_TOP_BOTTOM|cv2\.flip|ImageOps\.mirror|ImageOps\.flip)", flags)},
        {OpKind::Contrast,
         std::regex(R"(ImageEnhance\.Contrast|autocontrast|equalize|createCLAHE|convertScaleAbs|\bcontrast\b)", flags)},
        {OpKind::Brightness, std::regex(R"(ImageEnhance\.Brightness|\bbrightness\b|\bgamma\b)", flags)},
        {OpKind::Sharpen, std::regex(R"(ImageEnhance\.Sharpness|ImageFilter\.SHARPEN|UnsharpMask|\bsharpen)", flags)},
        {OpKind::Denoise,
         std::regex(R"(fastNlMeans|MedianFilter|GaussianBlur|medianBlur|bilateralFilter|\bdenoise)", flags)},
        {OpKind::Grayscale, std::regex(R"(convert\s*\(\s*['"]L['"]|COLOR_\w*2GRAY|ImageOps\.grayscale)", flags)},
        {OpKind::Threshold, std::regex(R"(cv2\.threshold|adaptiveThreshold|\bbinari[sz])", flags)},
        {OpKind::EdgeDetect, std::regex(R"(cv2\.Canny|FIND_EDGES|Sobel|Laplacian)", flags)},
        {OpKind::Annotate, std::regex(R"(ImageDraw|cv2\.rectangle|cv2\.putText|cv2\.circle|draw\.\w+\s*\()", flags)},
        {OpKind::PixelAnalysis,
         std::regex(R"(getpixel|np\.array\s*\(|np\.asarray|histogram|\.mean\s*\(|np\.where|getcolors)", flags)},
    };
  }();
  return kPatterns;
}

bool is_zoom_in(std::string_view code) {
  static const std::regex kWords(R"(\bzoom|upscal|enlarg|magnif|upsampl)", std::regex::icase);
  static const std::regex kFactor(R"((?:\*\s*|fx\s*=\s*|fy\s*=\s*|scale\w*\s*=\s*)(\d+(?:\.\d+)?))",
                                  std::regex::icase);
  const std::string s(code);
  if (std::regex_search(s, kWords)) return true;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), kFactor); it != std::sregex_iterator(); ++it) {
    if (std::stod((*it)[1].str()) > 1.0) return true;
  }
  return false;
}

}  // namespace

std::string_view op_kind_str(OpKind k) {
  switch (k) {
    case OpKind::Crop: return "crop";
    case OpKind::Resize: return "resize";
    case OpKind::ZoomIn: return "zoom_in";
    case OpKind::Rotate: return "rotate";
    case OpKind::Flip: return "flip";
    case OpKind::Contrast: return "contrast";
    case OpKind::Brightness: return "brightness";
    case OpKind::Sharpen: return "sharpen";
    case OpKind::Denoise: return "denoise";
    case OpKind::Grayscale: return "grayscale";
    case OpKind::Threshold: return "threshold";
    case OpKind::EdgeDetect: return "edge_detect";
    case OpKind::Annotate: return "annotate";
    case OpKind::PixelAnalysis: return "pixel_analysis";
  }
  return "";
}

std::vector<OpKind> detect_operations(std::string_view code) {
  const std::string s(code);
  std::vector<OpKind> out;
  for (const auto& p : patterns())
    if (std::regex_search(s, p.re)) out.push_back(p.kind);
  if (has_op(out, OpKind::Resize) && is_zoom_in(code)) out.push_back(OpKind::ZoomIn);
  std::sort(out.begin(), out.end());
  return out;
}

bool has_op(const std::vector<OpKind>& ops, OpKind k) { return std::find(ops.begin(), ops.end(), k) != ops.end(); }

std::optional<std::string> source_image(std::string_view code) {
  static const std::regex kOpen(R"((?:Image\.open|cv2\.imread)\s*\(\s*(?:r|f)?['"]([^'"]+)['"])");
  const std::string s(code);
  std::smatch m;
  if (std::regex_search(s, m, kOpen)) return m[1].str();
  return std::nullopt;
}

std::string describe_operations(const std::vector<OpKind>& ops) {
  if (ops.empty()) return "Process the image with code";
  std::string out;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    std::string_view word;
    switch (ops[i]) {
      case OpKind::Crop: word = "crop"; break;
      case OpKind::Resize: word = "resize"; break;
      case OpKind::ZoomIn: word = "zoom into"; break;
      case OpKind::Rotate: word = "rotate"; break;
      case OpKind::Flip: word = "flip"; break;
      case OpKind::Contrast: word = "enhance the contrast of"; break;
      case OpKind::Brightness: word = "adjust the brightness of"; break;
      case OpKind::Sharpen: word = "sharpen"; break;
      case OpKind::Denoise: word = "denoise"; break;
      case OpKind::Grayscale: word = "convert to grayscale"; break;
      case OpKind::Threshold: word = "threshold"; break;
      case OpKind::EdgeDetect: word = "detect edges in"; break;
      case OpKind::Annotate: word = "annotate"; break;
      case OpKind::PixelAnalysis: word = "analyze the pixels of"; break;
    }
    if (i > 0) out += (i + 1 == ops.size()) ? " and " : ", ";
    out += word;
  }
  out += " the image";
  out = replace_all(out, "convert to grayscale the image", "convert the image to grayscale");
  out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

}  // namespace mmagent::code_ops
