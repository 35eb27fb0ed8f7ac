"""braillemux: share one braille display between many applications.

A small client-server stack: ``braillemux.server`` runs the daemon that owns
the (simulated) braille device, ``braillemux.client`` is the library that
applications embed, and ``braillemux.tools`` holds the bundled command-line
clients.
"""

__version__ = "0.1.0"
