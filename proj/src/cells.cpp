/* Copyright 2026 The WS-NAS Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "wsnas/cells.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <regex>
#include <sstream>
#include <stdexcept>

namespace wsnas {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::MaxPool3x3: return "max_pool_3x3";
    case Op::AvgPool3x3: return "avg_pool_3x3";
    case Op::SepConv3x3: return "sep_conv_3x3";
    case Op::SepConv5x5: return "sep_conv_5x5";
    case Op::DilConv3x3: return "dil_conv_3x3";
    case Op::DilConv5x5: return "dil_conv_5x5";
    case Op::SkipConnect: return "skip_connect";
    case Op::Zero: return "zero";
  }
  return "unknown";
}

Op op_from_name(std::string_view name) {
  for (Op op : kAllOps)
    if (op_name(op) == name) return op;
  throw std::invalid_argument("unknown op name '" + std::string(name) + "'");
}

std::string_view cell_kind_name(CellKind kind) { return kind == CellKind::Normal ? "normal" : "reduce"; }

// CellSpec ---------------------------------------------------------------------

CellSpec::CellSpec(CellKind kind, int steps, std::vector<std::vector<Op>> edges)
    : kind_(kind), steps_(steps), edges_(std::move(edges)) {
  if (steps_ < 1) throw std::invalid_argument("CellSpec: need at least one intermediate node");
  if (num_edges() != edge_count(steps_))
    throw std::invalid_argument("CellSpec: " + std::to_string(steps_) + " intermediate nodes need " +
                                std::to_string(edge_count(steps_)) + " edges, got " + std::to_string(num_edges()));
  for (int e = 0; e < num_edges(); ++e) {
    auto& ops = edges_[static_cast<size_t>(e)];
    if (ops.empty()) throw std::invalid_argument("CellSpec: edge " + std::to_string(e) + " admits no op");
    auto sorted = ops;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw std::invalid_argument("CellSpec: edge " + std::to_string(e) + " lists an op twice");
  }
}

CellSpec CellSpec::uniform(CellKind kind, int steps, std::vector<Op> ops) {
  return CellSpec(kind, steps, std::vector<std::vector<Op>>(static_cast<size_t>(edge_count(steps)), ops));
}

CellSpec CellSpec::full(CellKind kind, int steps) {
  return uniform(kind, steps, std::vector<Op>(kAllOps.begin(), kAllOps.end()));
}

int CellSpec::edge_node(int edge) {
  int node = 0;
  while (edge_index(node + 1, 0) <= edge) ++node;
  return node;
}

int CellSpec::edge_pred(int edge) { return edge - edge_index(edge_node(edge), 0); }

bool CellSpec::admits(int e, Op op) const {
  const auto& ops = edge_ops(e);
  return std::find(ops.begin(), ops.end(), op) != ops.end();
}

std::optional<int> CellSpec::width() const {
  if (edges_.empty()) return std::nullopt;
  const size_t w = edges_.front().size();
  for (const auto& ops : edges_)
    if (ops.size() != w) return std::nullopt;
  return static_cast<int>(w);
}

int CellSpec::total_ops() const {
  int total = 0;
  for (const auto& ops : edges_) total += static_cast<int>(ops.size());
  return total;
}

// Alpha ------------------------------------------------------------------------

Alpha zero_alpha(const CellSpec& spec) {
  Alpha a;
  for (const auto& ops : spec.edges()) a.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ops.size())));
  return a;
}

void check_alpha(const CellSpec& spec, const Alpha& alpha) {
  if (static_cast<int>(alpha.size()) != spec.num_edges())
    throw std::invalid_argument("alpha has " + std::to_string(alpha.size()) + " edges, space has " +
                                std::to_string(spec.num_edges()));
  for (int e = 0; e < spec.num_edges(); ++e)
    if (alpha[static_cast<size_t>(e)].size() != static_cast<Eigen::Index>(spec.edge_ops(e).size()))
      throw std::invalid_argument("alpha edge " + std::to_string(e) + " has " +
                                  std::to_string(alpha[static_cast<size_t>(e)].size()) + " logits for " +
                                  std::to_string(spec.edge_ops(e).size()) + " ops");
}

Eigen::VectorXd edge_softmax(const Eigen::VectorXd& logits) {
  const double mx = logits.maxCoeff();
  if (!std::isfinite(mx)) return Eigen::VectorXd::Zero(logits.size());
  Eigen::VectorXd w = (logits.array() - mx).exp().matrix();
  // Vectorized exp maps -inf to a denormal rather than exactly 0.
  for (Eigen::Index k = 0; k < w.size(); ++k)
    if (logits[k] == -std::numeric_limits<double>::infinity()) w[k] = 0.0;
  return w / w.sum();
}

// Discretization ---------------------------------------------------------------

namespace {

struct EdgeChoice {
  int pred;
  Op op;
  double strength;
};

std::optional<EdgeChoice> best_nonzero(const CellSpec& spec, const Alpha& alpha, int node, int pred) {
  const int e = CellSpec::edge_index(node, pred);
  const auto& ops = spec.edge_ops(e);
  const Eigen::VectorXd& logits = alpha[static_cast<size_t>(e)];
  const Eigen::VectorXd w = edge_softmax(logits);
  std::optional<EdgeChoice> best;
  for (size_t k = 0; k < ops.size(); ++k) {
    if (ops[k] == Op::Zero) continue;
    if (logits[static_cast<Eigen::Index>(k)] == -std::numeric_limits<double>::infinity()) continue;
    const double s = w[static_cast<Eigen::Index>(k)];
    if (!best || s > best->strength || (s == best->strength && op_index(ops[k]) < op_index(best->op)))
      best = EdgeChoice{pred, ops[k], s};
  }
  return best;
}

}  // namespace

CellGenes discretize(const CellSpec& spec, const Alpha& alpha) {
  check_alpha(spec, alpha);
  CellGenes genes;
  for (int node = 0; node < spec.steps(); ++node) {
    std::vector<EdgeChoice> cands;
    for (int pred = 0; pred < node + 2; ++pred)
      if (auto c = best_nonzero(spec, alpha, node, pred)) cands.push_back(*c);
    if (cands.size() < 2)
      throw std::invalid_argument("discretize: node " + std::to_string(node) +
                                  " has fewer than two edges with a selectable non-zero op");
    std::sort(cands.begin(), cands.end(), [](const EdgeChoice& a, const EdgeChoice& b) {
      if (a.strength != b.strength) return a.strength > b.strength;
      if (a.op != b.op) return op_index(a.op) < op_index(b.op);
      return a.pred < b.pred;
    });
    std::array<EdgeChoice, 2> keep{cands[0], cands[1]};
    if (keep[1].pred < keep[0].pred) std::swap(keep[0], keep[1]);
    for (const auto& c : keep) genes.push_back({c.pred, c.op});
  }
  return genes;
}

Genotype derive_genotype(const CellSpec& normal, const Alpha& normal_alpha, const CellSpec& reduce,
                         const Alpha& reduce_alpha) {
  Genotype g;
  g.steps = normal.steps();
  g.normal = discretize(normal, normal_alpha);
  g.reduce = discretize(reduce, reduce_alpha);
  for (int i = 0; i < g.steps; ++i) g.concat.push_back(i + 2);
  return g;
}

int count_ops(const CellGenes& genes, Op op) {
  return static_cast<int>(std::count_if(genes.begin(), genes.end(), [op](const GeneEdge& e) { return e.op == op; }));
}

CellGenes refine_skip_connects(const CellSpec& spec, const Alpha& alpha, int max_skips) {
  if (max_skips < 0) throw std::invalid_argument("refine_skip_connects: M must be >= 0");
  Alpha a = alpha;
  for (;;) {
    CellGenes genes = discretize(spec, a);
    struct Skip {
      int edge;
      int k;
      int node;
      int pred;
      double weight;
    };
    std::vector<Skip> skips;
    for (size_t i = 0; i < genes.size(); ++i) {
      if (genes[i].op != Op::SkipConnect) continue;
      const int node = static_cast<int>(i / 2);
      const int e = CellSpec::edge_index(node, genes[i].pred);
      const auto& ops = spec.edge_ops(e);
      const int k = static_cast<int>(std::find(ops.begin(), ops.end(), Op::SkipConnect) - ops.begin());
      skips.push_back({e, k, node, genes[i].pred, edge_softmax(a[static_cast<size_t>(e)])[k]});
    }
    if (static_cast<int>(skips.size()) <= max_skips) return genes;
    std::sort(skips.begin(), skips.end(), [](const Skip& x, const Skip& y) {
      if (x.weight != y.weight) return x.weight > y.weight;
      if (x.pred != y.pred) return x.pred < y.pred;
      return x.node < y.node;
    });
    for (size_t i = static_cast<size_t>(max_skips); i < skips.size(); ++i)
      a[static_cast<size_t>(skips[i].edge)][skips[i].k] = -std::numeric_limits<double>::infinity();
  }
}

Genotype refine_genotype(const CellSpec& normal, const Alpha& normal_alpha, const CellSpec& reduce,
                         const Alpha& reduce_alpha, int max_skips) {
  Genotype g = derive_genotype(normal, normal_alpha, reduce, reduce_alpha);
  g.normal = refine_skip_connects(normal, normal_alpha, max_skips);
  return g;
}

bool is_subgraph(const CellGenes& genes, const CellSpec& space) {
  if (static_cast<int>(genes.size()) != 2 * space.steps()) return false;
  for (size_t i = 0; i < genes.size(); ++i) {
    const int node = static_cast<int>(i / 2);
    if (genes[i].pred < 0 || genes[i].pred > node + 1) return false;
    if (!space.admits(CellSpec::edge_index(node, genes[i].pred), genes[i].op)) return false;
  }
  return true;
}

bool is_subgraph(const Genotype& genotype, const CellSpec& normal, const CellSpec& reduce) {
  return is_subgraph(genotype.normal, normal) && is_subgraph(genotype.reduce, reduce);
}

CellSpec genes_to_spec(const CellGenes& genes, CellKind kind, int steps) {
  if (static_cast<int>(genes.size()) != 2 * steps)
    throw std::invalid_argument("genes_to_spec: expected " + std::to_string(2 * steps) + " genes");
  std::vector<std::vector<Op>> edges(static_cast<size_t>(CellSpec::edge_count(steps)), std::vector<Op>{Op::Zero});
  for (size_t i = 0; i < genes.size(); ++i) {
    const int node = static_cast<int>(i / 2);
    if (genes[i].pred < 0 || genes[i].pred > node + 1)
      throw std::invalid_argument("genes_to_spec: node " + std::to_string(node) + " has invalid predecessor " +
                                  std::to_string(genes[i].pred));
    edges[static_cast<size_t>(CellSpec::edge_index(node, genes[i].pred))] = {genes[i].op};
  }
  return CellSpec(kind, steps, std::move(edges));
}

// Graphviz ---------------------------------------------------------------------

namespace {

std::string dot_node_name(int pred) {
  if (pred == 0) return "c_{k-2}";
  if (pred == 1) return "c_{k-1}";
  return std::to_string(pred - 2);
}

int dot_node_pred(const std::string& name) {
  if (name == "c_{k-2}") return 0;
  if (name == "c_{k-1}") return 1;
  return std::stoi(name) + 2;
}

void dot_header(std::ostringstream& os, std::string_view graph_name, int steps) {
  os << "digraph " << graph_name << " {\n";
  os << "  rankdir=LR;\n";
  os << "  node [shape=box, style=rounded];\n";
  os << "  \"c_{k-2}\" [style=filled, fillcolor=darkseagreen2];\n";
  os << "  \"c_{k-1}\" [style=filled, fillcolor=darkseagreen2];\n";
  for (int i = 0; i < steps; ++i) os << "  \"" << i << "\" [style=filled, fillcolor=lightblue];\n";
  os << "  \"c_{k}\" [style=filled, fillcolor=palegoldenrod];\n";
}

void dot_footer(std::ostringstream& os, int steps) {
  for (int i = 0; i < steps; ++i) os << "  \"" << i << "\" -> \"c_{k}\" [color=gray];\n";
  os << "}\n";
}

}  // namespace

std::string export_dot(const CellGenes& genes, int steps, std::string_view graph_name) {
  std::ostringstream os;
  dot_header(os, graph_name, steps);
  for (size_t i = 0; i < genes.size(); ++i)
    os << "  \"" << dot_node_name(genes[i].pred) << "\" -> \"" << i / 2 << "\" [label=\"" << op_name(genes[i].op)
       << "\"];\n";
  dot_footer(os, genes.empty() ? steps : steps);
  return os.str();
}

std::string export_dot(const CellSpec& space, std::string_view graph_name) {
  std::ostringstream os;
  dot_header(os, graph_name, space.steps());
  for (int e = 0; e < space.num_edges(); ++e)
    for (Op op : space.edge_ops(e))
      os << "  \"" << dot_node_name(CellSpec::edge_pred(e)) << "\" -> \"" << CellSpec::edge_node(e) << "\" [label=\""
         << op_name(op) << "\"];\n";
  dot_footer(os, space.steps());
  return os.str();
}

std::vector<DotOpEdge> parse_dot_op_edges(std::string_view dot) {
  static const std::regex edge_re(R"re("([^"]+)"\s*->\s*"([^"]+)"\s*\[label="([^"]+)"\])re");
  std::vector<DotOpEdge> out;
  const std::string text(dot);
  for (auto it = std::sregex_iterator(text.begin(), text.end(), edge_re); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    out.push_back({dot_node_pred(m[1].str()), std::stoi(m[2].str()), op_from_name(m[3].str())});
  }
  return out;
}

// DOT grammar check ------------------------------------------------------------

namespace {

enum class Tok { Id, LBrace, RBrace, LBracket, RBracket, Semi, Comma, Eq, Colon, EdgeOp, End };

struct Token {
  Tok kind;
  std::string text;
  size_t pos;
};

class DotLexer {
 public:
  explicit DotLexer(std::string_view s) : s_(s) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    for (;;) {
      skip_space();
      if (i_ >= s_.size()) break;
      const size_t start = i_;
      const char c = s_[i_];
      switch (c) {
        case '{': out.push_back({Tok::LBrace, "{", start}); ++i_; continue;
        case '}': out.push_back({Tok::RBrace, "}", start}); ++i_; continue;
        case '[': out.push_back({Tok::LBracket, "[", start}); ++i_; continue;
        case ']': out.push_back({Tok::RBracket, "]", start}); ++i_; continue;
        case ';': out.push_back({Tok::Semi, ";", start}); ++i_; continue;
        case ',': out.push_back({Tok::Comma, ",", start}); ++i_; continue;
        case '=': out.push_back({Tok::Eq, "=", start}); ++i_; continue;
        case ':': out.push_back({Tok::Colon, ":", start}); ++i_; continue;
        default: break;
      }
      if (c == '-' && i_ + 1 < s_.size() && (s_[i_ + 1] == '>' || s_[i_ + 1] == '-')) {
        out.push_back({Tok::EdgeOp, std::string(s_.substr(i_, 2)), start});
        i_ += 2;
        continue;
      }
      if (c == '"') {
        ++i_;
        std::string text;
        while (i_ < s_.size() && s_[i_] != '"') {
          if (s_[i_] == '\\' && i_ + 1 < s_.size()) ++i_;
          text += s_[i_++];
        }
        if (i_ >= s_.size()) throw std::runtime_error("unterminated string at offset " + std::to_string(start));
        ++i_;
        out.push_back({Tok::Id, text, start});
        continue;
      }
      if (c == '<') {
        int depth = 0;
        while (i_ < s_.size()) {
          if (s_[i_] == '<') ++depth;
          if (s_[i_] == '>' && --depth == 0) break;
          ++i_;
        }
        if (i_ >= s_.size()) throw std::runtime_error("unterminated HTML string at offset " + std::to_string(start));
        ++i_;
        out.push_back({Tok::Id, std::string(s_.substr(start, i_ - start)), start});
        continue;
      }
      if (is_id_start(c)) {
        while (i_ < s_.size() && (is_id_start(s_[i_]) || std::isdigit(static_cast<unsigned char>(s_[i_])))) ++i_;
        out.push_back({Tok::Id, std::string(s_.substr(start, i_ - start)), start});
        continue;
      }
      if (c == '-' || c == '.' || std::isdigit(static_cast<unsigned char>(c))) {
        if (c == '-') ++i_;
        bool digits = false, dot = false;
        while (i_ < s_.size()) {
          if (std::isdigit(static_cast<unsigned char>(s_[i_]))) {
            digits = true;
          } else if (s_[i_] == '.' && !dot) {
            dot = true;
          } else {
            break;
          }
          ++i_;
        }
        if (!digits) throw std::runtime_error("malformed numeral at offset " + std::to_string(start));
        out.push_back({Tok::Id, std::string(s_.substr(start, i_ - start)), start});
        continue;
      }
      throw std::runtime_error(std::string("unexpected character '") + c + "' at offset " + std::to_string(start));
    }
    out.push_back({Tok::End, "", s_.size()});
    return out;
  }

 private:
  static bool is_id_start(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || static_cast<unsigned char>(c) >= 0x80;
  }

  void skip_space() {
    for (;;) {
      while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
      if (s_.substr(i_, 2) == "//" || (i_ < s_.size() && s_[i_] == '#')) {
        while (i_ < s_.size() && s_[i_] != '\n') ++i_;
      } else if (s_.substr(i_, 2) == "/*") {
        const size_t end = s_.find("*/", i_ + 2);
        if (end == std::string_view::npos) throw std::runtime_error("unterminated comment");
        i_ = end + 2;
      } else {
        return;
      }
    }
  }

  std::string_view s_;
  size_t i_ = 0;
};

class DotParser {
 public:
  explicit DotParser(std::vector<Token> toks) : t_(std::move(toks)) {}

  void parse_graph() {
    if (keyword("strict")) ++p_;
    if (keyword("digraph")) {
      directed_ = true;
    } else if (!keyword("graph")) {
      fail("expected 'graph' or 'digraph'");
    }
    ++p_;
    if (peek().kind == Tok::Id) ++p_;
    expect(Tok::LBrace, "'{'");
    stmt_list();
    expect(Tok::RBrace, "'}'");
    if (peek().kind != Tok::End) fail("trailing content after graph");
  }

 private:
  const Token& peek(size_t k = 0) const { return t_[std::min(p_ + k, t_.size() - 1)]; }

  bool keyword(const char* kw, size_t k = 0) const {
    const Token& tok = peek(k);
    if (tok.kind != Tok::Id || tok.text.size() != std::char_traits<char>::length(kw)) return false;
    for (size_t i = 0; i < tok.text.size(); ++i)
      if (std::tolower(static_cast<unsigned char>(tok.text[i])) != kw[i]) return false;
    return true;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw std::runtime_error(msg + " at offset " + std::to_string(peek().pos));
  }

  void expect(Tok kind, const char* what) {
    if (peek().kind != kind) fail(std::string("expected ") + what);
    ++p_;
  }

  void stmt_list() {
    while (peek().kind != Tok::RBrace && peek().kind != Tok::End) {
      stmt();
      if (peek().kind == Tok::Semi) ++p_;
    }
  }

  void stmt() {
    if (keyword("graph") || keyword("node") || keyword("edge")) {
      ++p_;
      attr_list(true);
      return;
    }
    if (peek().kind == Tok::Id && peek(1).kind == Tok::Eq && !keyword("subgraph")) {
      p_ += 2;
      expect(Tok::Id, "ID after '='");
      return;
    }
    operand();
    bool edge = false;
    while (peek().kind == Tok::EdgeOp) {
      if ((peek().text == "->") != directed_) fail("edge operator does not match graph type");
      ++p_;
      operand();
      edge = true;
    }
    (void)edge;
    if (peek().kind == Tok::LBracket) attr_list(false);
  }

  void operand() {
    if (keyword("subgraph") || peek().kind == Tok::LBrace) {
      subgraph();
      return;
    }
    expect(Tok::Id, "node ID");
    if (peek().kind == Tok::Colon) {
      ++p_;
      expect(Tok::Id, "port");
      if (peek().kind == Tok::Colon) {
        ++p_;
        expect(Tok::Id, "compass point");
      }
    }
  }

  void subgraph() {
    if (keyword("subgraph")) {
      ++p_;
      if (peek().kind == Tok::Id) ++p_;
    }
    expect(Tok::LBrace, "'{'");
    stmt_list();
    expect(Tok::RBrace, "'}'");
  }

  void attr_list(bool required) {
    if (required && peek().kind != Tok::LBracket) fail("expected '['");
    while (peek().kind == Tok::LBracket) {
      ++p_;
      while (peek().kind == Tok::Id) {
        ++p_;
        expect(Tok::Eq, "'='");
        expect(Tok::Id, "attribute value");
        if (peek().kind == Tok::Semi || peek().kind == Tok::Comma) ++p_;
      }
      expect(Tok::RBracket, "']'");
    }
  }

  std::vector<Token> t_;
  size_t p_ = 0;
  bool directed_ = false;
};

}  // namespace

std::optional<std::string> dot_syntax_error(std::string_view dot) {
  try {
    DotParser(DotLexer(dot).run()).parse_graph();
    return std::nullopt;
  } catch (const std::runtime_error& e) {
    return std::string(e.what());
  }
}

}  // namespace wsnas
