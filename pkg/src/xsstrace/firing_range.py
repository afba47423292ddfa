"""A deliberately vulnerable testbed.

Every test case is a standalone page with no external resources.  Reflected
cases echo the ``q`` query parameter into one HTML parser context, DOM cases
serve fixed script bodies that wire a client-side source into a sink, and
retrofit cases run the input through a filter that only one kind of payload
survives.  Each case carries a static oracle deciding whether an injected
string escaped its context.
"""

from __future__ import annotations

import contextlib
import html
import json
import logging
import re
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from importlib import resources
from pathlib import Path
from typing import Callable, Iterator, Sequence

from .capture import parse_query_string, split_target

log = logging.getLogger(__name__)

REFLECTED, DOM, RETROFIT = "reflected", "dom", "retrofit"
PARAM = "q"
SAMPLE = "sample"


def _page(inner: str, head: str = "") -> str:
    head = f"  <head>{head}</head>\n" if head else ""
    return f"<html>\n{head}  <body>\n    {inner}\n  </body>\n</html>\n"


# -- filters ----------------------------------------------------------------

def identity(text: str) -> str:
    return text


_TAG = re.compile(r"""<(/?)((?:[^>"']|"[^"]*"|'[^']*')*)>""")
_TAG_NAME = re.compile(r"\s*([A-Za-z][\w:-]*)")
_ATTR = re.compile(r"""([^\s=/>"']+)(?:\s*=\s*("[^"]*"|'[^']*'|[^\s"'>]+))?""")


def retrofit_filter_style_expression(text: str) -> str:
    """Drop script tags and every attribute except ``style`` from other tags."""
    def fix(m: re.Match) -> str:
        closing, inner = m.group(1), m.group(2)
        name_m = _TAG_NAME.match(inner.replace("\r", "").replace("\n", ""))
        if name_m is None:
            return m.group(0)
        name = name_m.group(1)
        if name.lower() == "script":
            return ""
        if closing:
            return f"</{name}>"
        rest = _TAG_NAME.sub("", inner, count=1)
        styles = [a.group(0) for a in _ATTR.finditer(rest) if a.group(1).lower() == "style"]
        return "<" + " ".join([name] + styles) + ">"

    return _TAG.sub(fix, text)


_LITERAL_SCRIPT = re.compile(r"</?script>", re.IGNORECASE)


def retrofit_filter_crlf_scripttag(text: str) -> str:
    """Remove exact ``<script>``/``</script>`` tags without normalising line breaks."""
    return _LITERAL_SCRIPT.sub("", text)


FILTERS: dict[str, Callable[[str], str]] = {
    "identity": identity,
    "style-expression": retrofit_filter_style_expression,
    "crlf-scripttag": retrofit_filter_crlf_scripttag,
}


# -- context breakout predicates ---------------------------------------------

def _rx(pattern: str, flags: int = re.IGNORECASE) -> Callable[[str], bool]:
    compiled = re.compile(pattern, flags)
    return lambda s: compiled.search(s) is not None


def _js_uri(s: str) -> bool:
    return re.match(r"\s*javascript:", re.sub(r"[\t\r\n\x00]", "", s), re.IGNORECASE) is not None


_CONTEXTS: dict[str, tuple[str, Callable[[str], bool], str]] = {
    # name: (page body with {q}, breakout predicate, witness)
    "body": ("{q}", _rx(r"<[a-z]"), "<script>alert(1)</script>"),
    "comment": ("<!-- {q} -->", _rx(r"--!?>"), "--><script>alert(1)</script>"),
    "attribute-doublequoted": ('<div title="{q}"></div>', _rx('"'), '"><script>alert(1)</script>'),
    "attribute-singlequoted": ("<div title='{q}'></div>", _rx("'"), "'><script>alert(1)</script>"),
    "attribute-unquoted": ("<div title={q}></div>", _rx(r"[\s>]"), "x onmouseover=alert(1)"),
    "href": ('<a href="{q}">Link!</a>', lambda s: _js_uri(s) or '"' in s, "javascript:alert(1)"),
    "script-doublequoted": ('<script>var foo="{q}";</script>', _rx(r'"|</script'), '";alert(1);//'),
    "script-singlequoted": ("<script>var foo='{q}';</script>", _rx(r"'|</script"), "';alert(1);//"),
    "scriptslashquote": ("<script>var foo=/{q}/;</script>", _rx(r"/"), "/;alert(1);//"),
    "script-raw": ("<script>{q}</script>", _rx(r"[\w$.]+\s*\(|</script"), "alert(1)"),
    "style-block": ("<style>{q}</style>", _rx(r"</style|expression\s*\(|javascript:"),
                    "</style><script>alert(1)</script>"),
    "style-attribute": ('<div style="{q}"></div>', _rx(r'"|expression\s*\('), '" onmouseover="alert(1)'),
    "textarea": ("<textarea>{q}</textarea>", _rx(r"</textarea"), "</textarea><script>alert(1)</script>"),
}

_RETROFIT_ORACLES: dict[str, Callable[[str], bool]] = {
    "style-expression": _rx(r"""<[a-z][^>]*\bstyle\s*=\s*["']?[^"'>]*expression\s*\("""),
    "crlf-scripttag": _rx(r"<script[\r\n]+[^>]*>"),
}


# -- DOM pages ----------------------------------------------------------------

_DOM_HASH_INNERHTML = """<html>
  <body>
    <script>
      var payload = window.location.hash.substr(1);
      var div = document.createElement('div');
      div.id = 'divEl';
      document.documentElement.appendChild(div);

      var divEl = document.getElementById('divEl');
      divEl.innerHTML = payload;
    </script>
  </body>
</html>
"""

_DOM_LOCATION_SETTIMEOUT = """<html>
  <body>
    <script>
      var payload = window.location;
      setTimeout('var a=a;' + payload, 1);
    </script>
  </body>
</html>
"""

_DOM_DOCUMENTURI_WRITE = """<html>
  <head><title>Address based DOM XSS</title></head>
  <body>
    <script>
      var payload = document.documentURI;
      document.write(payload);
    </script>
  </body>
</html>
"""

_DOM_WINDOWNAME_EVAL = """<html>
  <head><title>Toxic DOM</title></head>
  <body>
    <script>
      var payload = window.name;
      eval(payload);
    </script>
  </body>
</html>
"""

_HTML_SINKS = {"innerHTML", "document.write"}

# route, source, sink, page, source expression, sink call pattern
_DOM_CASES = [
    ("/dom/hash-innerhtml", "location.hash", "innerHTML", _DOM_HASH_INNERHTML,
     r"window\.location\.hash", r"\.innerHTML\s*=\s*payload"),
    ("/dom/location-settimeout", "location", "setTimeout", _DOM_LOCATION_SETTIMEOUT,
     r"window\.location\s*;", r"setTimeout\([^\n]*\bpayload"),
    ("/dom/address-documentwrite", "documentURI", "document.write", _DOM_DOCUMENTURI_WRITE,
     r"document\.documentURI", r"document\.write\(\s*payload"),
    ("/dom/toxic-eval", "window.name", "eval", _DOM_WINDOWNAME_EVAL,
     r"window\.name", r"\beval\(\s*payload"),
]


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # not a pytest class

    route: str
    kind: str
    context: str | tuple[str, str]
    filter: str = "identity"
    sample_input: str = SAMPLE
    witness: str = ""
    body_template: str = ""
    oracle_name: str = ""

    def render(self, value: str | None) -> str:
        if self.kind == DOM:
            return self.body_template
        value = SAMPLE if value is None else value
        return self.body_template.replace("{q}", FILTERS[self.filter](value))

    def to_json(self) -> dict:
        ctx = list(self.context) if isinstance(self.context, tuple) else self.context
        return {"route": self.route, "kind": self.kind, "context": ctx, "filter": self.filter,
                "sample_input": self.sample_input, "witness": self.witness}


def _load_retrofit(path: str | Path | None = None) -> list[dict]:
    if path is None:
        text = resources.files("xsstrace.data").joinpath("retrofit_cases.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return json.loads(text)


def build_catalog(retrofit_file: str | Path | None = None) -> list[TestCase]:
    cases = []
    for name, (inner, _, witness) in _CONTEXTS.items():
        cases.append(TestCase(f"/reflected/{name}", REFLECTED, name, witness=witness,
                              body_template=_page(inner)))
    for route, source, sink, page, _, _ in _DOM_CASES:
        witness = "<img src=x onerror=alert(1)>" if sink in _HTML_SINKS else "alert(1)"
        cases.append(TestCase(route, DOM, (source, sink), witness=witness, body_template=page))
    for spec in _load_retrofit(retrofit_file):
        if spec["filter"] not in FILTERS or spec["oracle"] not in _RETROFIT_ORACLES:
            raise ValueError(f"retrofit case {spec['route']}: unknown filter or oracle")
        cases.append(TestCase(spec["route"], RETROFIT, "body", filter=spec["filter"],
                              witness=spec["witness"], body_template=_page("{q}"),
                              oracle_name=spec["oracle"]))
    routes = [c.route for c in cases]
    if len(set(routes)) != len(routes):
        raise ValueError("duplicate routes in catalog")
    return cases


def export_catalog(cases: Sequence[TestCase], path: str | Path) -> None:
    Path(path).write_text(json.dumps([c.to_json() for c in cases], indent=2) + "\n", encoding="utf-8")


def load_catalog(path: str | Path) -> list[dict]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _dom_wired(case: TestCase, body: str) -> bool:
    for route, _, _, _, source_rx, sink_rx in _DOM_CASES:
        if route == case.route:
            return (re.search(r"var\s+payload\s*=\s*" + source_rx, body) is not None
                    and re.search(sink_rx, body) is not None)
    return False


def oracle_check(case: TestCase, response_body: str, injected: str) -> bool:
    """Static exploitability check of one response for one injected string."""
    if case.kind == DOM:
        _, sink = case.context
        if sink in _HTML_SINKS:
            runnable = re.search(r"<[a-z]", injected, re.IGNORECASE) is not None
        else:
            runnable = re.search(r"[\w$.]+\s*\(", injected) is not None
        return runnable and _dom_wired(case, response_body)
    filtered = FILTERS[case.filter](injected)
    if not filtered or filtered not in response_body:
        return False
    if case.kind == RETROFIT:
        return _RETROFIT_ORACLES[case.oracle_name](filtered)
    return _CONTEXTS[case.context][1](filtered)


# -- HTTP service -------------------------------------------------------------

class FiringRange:
    """Stateless request dispatcher over an immutable catalog."""

    def __init__(self, catalog: Sequence[TestCase] | None = None):
        self.catalog = list(catalog if catalog is not None else build_catalog())
        self.by_route = {c.route: c for c in self.catalog}
        if len(self.by_route) != len(self.catalog):
            raise ValueError("duplicate routes in catalog")

    def index(self) -> str:
        items = []
        for c in self.catalog:
            href = c.route if c.kind == DOM else f"{c.route}?{PARAM}={c.sample_input}"
            label = c.context if isinstance(c.context, str) else " to ".join(c.context)
            items.append(f'<li><a href="{html.escape(href)}">{c.kind}: {html.escape(label)}</a></li>')
        return _page("<ul>\n" + "\n".join(items) + "\n</ul>")

    def respond(self, target: str, body: bytes = b"") -> tuple[int, str]:
        path, query = split_target(target)
        if path == "/":
            return 200, self.index()
        case = self.by_route.get(path)
        if case is None:
            return 404, _page("not found")
        params = parse_query_string(query)
        if body:
            params += parse_query_string(body.decode("latin-1"))
        value = next((p.decoded_value for p in params if p.name == PARAM), None)
        return 200, case.render(value)


class _Handler(BaseHTTPRequestHandler):
    server_version = "FiringRange/1.0"
    sys_version = ""
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True  # headers and body go out in separate writes
    app: FiringRange

    def _reply(self, body: bytes = b"") -> None:
        status, page = self.app.respond(self.path, body)
        data = page.encode("utf-8")
        self.send_response_only(status)
        self.send_header("Content-Type", "text/html; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        self._reply()

    def do_POST(self):
        length = int(self.headers.get("Content-Length") or 0)
        self._reply(self.rfile.read(length))

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)


def make_server(bind: tuple[str, int], catalog: Sequence[TestCase] | None = None) -> ThreadingHTTPServer:
    handler = type("Handler", (_Handler,), {"app": FiringRange(catalog)})
    server = ThreadingHTTPServer(bind, handler)
    server.daemon_threads = True
    return server


def serve(bind: tuple[str, int], catalog: Sequence[TestCase] | None = None) -> None:
    server = make_server(bind, catalog)
    host, port = server.server_address[:2]
    log.info("serving on http://%s:%d/", host, port)
    try:
        server.serve_forever()
    finally:
        server.server_close()


@contextlib.contextmanager
def running(bind: tuple[str, int] = ("127.0.0.1", 0),
            catalog: Sequence[TestCase] | None = None) -> Iterator[str]:
    """Run the service on a background thread; yields its base URL."""
    server = make_server(bind, catalog)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address[:2]
    try:
        yield f"http://{host}:{port}"
    finally:
        server.shutdown()
        server.server_close()


_REF = re.compile(r"""\b(?:src|href|action|data)\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s>]+))""", re.IGNORECASE)


def external_references(page: str, routes: Sequence[str], reflected: str | None = None) -> list[str]:
    """Resource references in ``page`` that point outside the catalog."""
    bad = []
    for m in _REF.finditer(page):
        ref = next(g for g in m.groups() if g is not None)
        if reflected is not None and ref == reflected:
            continue
        path, _ = split_target(html.unescape(ref))
        if "//" in ref or path not in routes:
            bad.append(ref)
    return bad
