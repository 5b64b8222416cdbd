#include "seqmt/graph.hpp"

#include <unordered_map>
#include <unordered_set>

namespace seqmt {

namespace {

template <typename S>
void visit_params(Layer<S>& layer, std::vector<ParamBlock<S>*>& out,
                  std::unordered_set<ParamBlock<S>*>& seen,
                  std::unordered_map<std::string, ParamBlock<S>*>& by_name) {
  for (auto* p : layer.params()) {
    if (!seen.insert(p).second) continue;
    auto [it, fresh] = by_name.emplace(p->name, p);
    if (!fresh && it->second != p) {
      throw ConstructionError("duplicate parameter name '" + p->name + "'");
    }
    out.push_back(p);
  }
}

}  // namespace

template <typename S>
std::vector<ParamBlock<S>*> LayerChain<S>::params() {
  std::vector<ParamBlock<S>*> out;
  std::unordered_set<ParamBlock<S>*> seen;
  std::unordered_map<std::string, ParamBlock<S>*> by_name;
  for (auto* l : layers_) visit_params(*l, out, seen, by_name);
  return out;
}

template <typename S>
std::vector<ParamBlock<S>*> collect_params(std::span<LayerChain<S>* const> chains) {
  std::vector<ParamBlock<S>*> out;
  std::unordered_set<ParamBlock<S>*> seen;
  std::unordered_map<std::string, ParamBlock<S>*> by_name;
  for (auto* chain : chains) visit_params<S>(*chain, out, seen, by_name);
  return out;
}

template <typename S>
void zero_grads(std::span<ParamBlock<S>* const> blocks) {
  for (auto* b : blocks) b->weight.zero_grad();
}

template class LayerChain<float>;
template class LayerChain<double>;
template std::vector<ParamBlock<float>*> collect_params<float>(std::span<LayerChain<float>* const>);
template std::vector<ParamBlock<double>*> collect_params<double>(
    std::span<LayerChain<double>* const>);
template void zero_grads<float>(std::span<ParamBlock<float>* const>);
template void zero_grads<double>(std::span<ParamBlock<double>* const>);

}  // namespace seqmt
