"""Monte-Carlo model of a single-switch loop demultiplexer for a pulsed single-photon source.

Modules, upstream to downstream: ``clock_source`` (pump clock and emission),
``control_sequencer`` (driver timing), ``loop_demux`` (routing through the
loop), ``detection`` (clicks and beamsplitter interference), ``analysis``
(correlation histograms and estimators), ``pipeline`` and ``cli``.
"""

__version__ = "0.1.0"
