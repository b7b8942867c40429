#pragma once

#include "cmrt/dsp/audio.hpp"
#include "cmrt/dsp/cqt.hpp"
#include "cmrt/dsp/synth.hpp"
#include "cmrt/dsp/transforms.hpp"
#include "cmrt/dsp/wav.hpp"
