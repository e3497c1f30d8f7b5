"""Expose the embedded mock broker on a TCP port.

External brokers and the mock are then tested through the identical
client code path. One thread per connection; the broker facade itself
serializes packet handling.
"""

from __future__ import annotations

import logging
import socket
import threading

from . import codec
from .harness import EmbeddedBroker
from .mock_broker import MockBrokerConfig

logger = logging.getLogger(__name__)


class MockTcpServer:
    def __init__(self, config: MockBrokerConfig | None = None, host: str = "127.0.0.1", port: int = 0):
        self.broker = EmbeddedBroker(config)
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(64)
        self.host, self.port = self._listener.getsockname()
        self._running = False
        self._accept_thread: threading.Thread | None = None
        self._conn_threads: list[threading.Thread] = []

    def start(self) -> None:
        self._running = True
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        logger.info("mock broker listening on %s:%d", self.host, self.port)

    def _accept_loop(self) -> None:
        self._listener.settimeout(0.2)
        while self._running:
            try:
                sock, addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            thread = threading.Thread(target=self._serve_conn, args=(sock,), daemon=True)
            thread.start()
            self._conn_threads.append(thread)

    def _serve_conn(self, sock: socket.socket) -> None:
        conn = self.broker.attach()
        sock.settimeout(0.1)
        try:
            while self._running:
                for packet in self.broker.take_packets(conn):
                    sock.sendall(codec.encode(packet))
                if self.broker.is_closed(conn):
                    break
                try:
                    data = sock.recv(4096)
                except socket.timeout:
                    continue
                except OSError:
                    break
                if not data:
                    break
                self.broker.feed(conn, data)
            # flush replies the closing packet produced (e.g. a CONNACK
            # carrying a non-zero return code) before dropping the socket
            for packet in self.broker.take_packets(conn):
                sock.sendall(codec.encode(packet))
        except OSError:
            pass
        finally:
            self.broker.detach(conn)
            try:
                sock.close()
            except OSError:
                pass

    def stop(self) -> None:
        self._running = False
        try:
            self._listener.close()
        except OSError:
            pass
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2)
        for thread in self._conn_threads:
            thread.join(timeout=2)

    def serve_forever(self) -> None:
        self.start()
        try:
            while True:
                threading.Event().wait(3600)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()
