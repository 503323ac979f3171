//! TCP endpoints: a line-oriented server in front of any component, and a
//! client that is itself a component.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use mmw_core::format::Format;
use mmw_core::query::render_query;
use mmw_core::schema::ProductSchema;
use mmw_core::{Query, Table};

use crate::component::{Component, Kind, Lineage, MaterializeReport, Stats};
use crate::protocol::{handle_line, ComponentError, Request, Response};

pub struct TcpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    connections: Arc<Mutex<Vec<TcpStream>>>,
    accept: Option<JoinHandle<()>>,
}

impl TcpServer {
    /// Binds `addr` and serves `component` until stopped. One request per
    /// line, one response per line; connections are reusable.
    pub fn start(component: Arc<dyn Component>, addr: &str) -> io::Result<TcpServer> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let connections: Arc<Mutex<Vec<TcpStream>>> = Arc::default();
        let accept = {
            let stop = Arc::clone(&stop);
            let connections = Arc::clone(&connections);
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    if let Ok(clone) = stream.try_clone() {
                        connections.lock().unwrap().push(clone);
                    }
                    let component = Arc::clone(&component);
                    std::thread::spawn(move || serve_connection(component.as_ref(), stream));
                }
            })
        };
        Ok(TcpServer {
            addr,
            stop,
            connections,
            accept: Some(accept),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // wake the accept loop
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for c in self.connections.lock().unwrap().drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for TcpServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn serve_connection(component: &dyn Component, stream: TcpStream) {
    let Ok(mut writer) = stream.try_clone() else { return };
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let response = handle_line(component, &line);
        if writeln!(writer, "{}", response.to_line())
            .and_then(|_| writer.flush())
            .is_err()
        {
            break;
        }
    }
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// A component reached over TCP.
pub struct RemoteComponent {
    id: String,
    kind: Kind,
    addr: SocketAddr,
    namespace: String,
    conn: Mutex<Option<Connection>>,
}

impl RemoteComponent {
    /// Connects and learns the served namespace from the remote schema.
    pub fn connect(id: &str, kind: Kind, addr: SocketAddr) -> Result<RemoteComponent, ComponentError> {
        let mut remote = RemoteComponent {
            id: id.to_string(),
            kind,
            addr,
            namespace: String::new(),
            conn: Mutex::new(None),
        };
        remote.namespace = remote.get_schema()?.product;
        Ok(remote)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    fn open(&self) -> io::Result<Connection> {
        let writer = TcpStream::connect_timeout(&self.addr, Duration::from_secs(5))?;
        writer.set_nodelay(true)?;
        let reader = BufReader::new(writer.try_clone()?);
        Ok(Connection { reader, writer })
    }

    fn exchange(conn: &mut Connection, line: &str) -> io::Result<String> {
        writeln!(conn.writer, "{line}")?;
        conn.writer.flush()?;
        let mut reply = String::new();
        if conn.reader.read_line(&mut reply)? == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed"));
        }
        Ok(reply)
    }

    /// Sends one request line and returns the raw response line.
    pub fn call_line(&self, line: &str) -> Result<String, ComponentError> {
        let mut guard = self.conn.lock().unwrap();
        let unavailable = |e: io::Error| ComponentError::unavailable(&self.id, format!("{}: {e}", self.addr));
        // one retry covers a server that dropped an idle connection
        for attempt in 0..2 {
            if guard.is_none() {
                *guard = Some(self.open().map_err(unavailable)?);
            }
            match Self::exchange(guard.as_mut().unwrap(), line) {
                Ok(reply) => return Ok(reply),
                Err(e) => {
                    *guard = None;
                    if attempt == 1 {
                        return Err(unavailable(e));
                    }
                }
            }
        }
        unreachable!()
    }

    pub fn call(&self, request: &Request) -> Result<Response, ComponentError> {
        let reply = self.call_line(&request.to_line())?;
        match Response::parse(reply.trim_end()) {
            Ok(Response::Error(e)) => Err(e),
            Ok(r) => Ok(r),
            Err(m) => Err(ComponentError::protocol(&self.id, format!("bad response: {m}"))),
        }
    }

    fn unexpected(&self, r: Response) -> ComponentError {
        ComponentError::protocol(&self.id, format!("unexpected response {}", r.to_line()))
    }

    fn exec(&self, q: &Query, principal: &str, format: Option<Format>) -> Result<Response, ComponentError> {
        self.call(&Request::ExecQuery {
            query: render_query(q),
            principal: Some(principal.to_string()),
            format: format.map(|f| f.name().to_string()),
        })
    }
}

impl Component for RemoteComponent {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> Kind {
        self.kind
    }

    fn namespace(&self) -> String {
        self.namespace.clone()
    }

    fn get_schema(&self) -> Result<ProductSchema, ComponentError> {
        match self.call(&Request::GetSchema)? {
            Response::Schema { schema } => Ok(schema),
            r => Err(self.unexpected(r)),
        }
    }

    fn execute(&self, q: &Query, principal: &str) -> Result<Table, ComponentError> {
        match self.exec(q, principal, None)? {
            Response::Table(w) => w
                .into_table("result")
                .map_err(|m| ComponentError::protocol(&self.id, format!("bad table: {m}"))),
            r => Err(self.unexpected(r)),
        }
    }

    fn serve(&self, q: &Query, format: Format, principal: &str) -> Result<String, ComponentError> {
        match self.exec(q, principal, Some(format))? {
            Response::Rendering { body, .. } => Ok(body),
            r => Err(self.unexpected(r)),
        }
    }

    fn epoch(&self) -> Result<u64, ComponentError> {
        match self.call(&Request::Epoch)? {
            Response::Epoch { epoch } => Ok(epoch),
            r => Err(self.unexpected(r)),
        }
    }

    fn stats(&self) -> Result<Stats, ComponentError> {
        match self.call(&Request::Stats)? {
            Response::Stats { stats, .. } => Ok(stats),
            r => Err(self.unexpected(r)),
        }
    }

    fn lineage(&self, relation: &str) -> Result<Lineage, ComponentError> {
        match self.call(&Request::Lineage {
            relation: relation.to_string(),
        })? {
            Response::Lineage { lineage } => Ok(lineage),
            r => Err(self.unexpected(r)),
        }
    }

    fn materialize(&self) -> Result<MaterializeReport, ComponentError> {
        match self.call(&Request::Materialize)? {
            Response::Materialized { report } => Ok(report),
            r => Err(self.unexpected(r)),
        }
    }
}
