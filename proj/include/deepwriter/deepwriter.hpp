#pragma once

// Umbrella header for the DeepWriter writer-identification engine.

#include "deepwriter/architecture.hpp"
#include "deepwriter/checkpoint.hpp"
#include "deepwriter/errors.hpp"
#include "deepwriter/image.hpp"
#include "deepwriter/image_io.hpp"
#include "deepwriter/layers.hpp"
#include "deepwriter/manifest.hpp"
#include "deepwriter/network.hpp"
#include "deepwriter/optimizer.hpp"
#include "deepwriter/patching.hpp"
#include "deepwriter/pipeline.hpp"
#include "deepwriter/random.hpp"
#include "deepwriter/synth.hpp"
#include "deepwriter/tensor.hpp"
